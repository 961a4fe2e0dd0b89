"""Error types shared across the package.

Input validation failures raise plain ValueError. DegeneracyError marks
numeric breakdown in an otherwise valid computation (all-zero weight
vectors, non-finite losses) so callers can distinguish the two.
"""


class DegeneracyError(RuntimeError):
    """Raised when a computation degenerates numerically despite valid inputs."""

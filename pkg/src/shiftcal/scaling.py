"""Post-hoc calibration maps fitted on held-out logits.

Temperature search runs on log t over [T_MIN, T_MAX]: a 50-point log-spaced
grid brackets the optimum, golden-section search refines it to SEARCH_TOL
in t, and the returned temperature is never worse than any grid point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError
from .metrics import ProbabilitySet, nll

__all__ = [
    "AffineScaleParam",
    "ScalingFitConfig",
    "T_MAX",
    "T_MIN",
    "TemperatureParam",
    "apply_affine_scaling",
    "fit_cpcs_temperature",
    "fit_matrix_scaling",
    "fit_oracle_temperature",
    "fit_temperature_nll",
    "fit_vector_scaling",
    "softmax_with_temperature",
]

T_MIN = 0.05
T_MAX = 100.0
SEARCH_TOL = 1e-4
_GRID_SIZE = 50


@dataclass
class TemperatureParam:
    """A fitted softmax temperature. ``degenerate`` flags boundary or ill-posed fits."""

    t: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"temperature must be positive and finite, got {self.t!r}")


@dataclass
class ScalingFitConfig:
    """Full-batch gradient descent settings for vector and matrix scaling."""

    learning_rate: float = 0.01
    max_iterations: int = 2000
    min_improvement: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0 or self.max_iterations < 1 or self.min_improvement < 0.0:
            raise ValueError("invalid scaling fit configuration")


@dataclass
class AffineScaleParam:
    """Class-wise affine recalibration: softmax(scale o logits + bias).

    ``scale`` has shape (K,) for vector scaling (elementwise) or (K, K) for
    matrix scaling (matrix product).
    """

    scale: np.ndarray
    bias: np.ndarray
    kind: str
    iterations: int = 0
    converged: bool = False
    initial_loss: float = math.nan
    final_loss: float = math.nan


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
        raise ValueError("logits must be a non-empty 2-d array of shape (n, K)")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite entries")
    return logits


def _weight_values(weights) -> np.ndarray:
    # Accept a bare array or anything carrying a .values array.
    return np.asarray(getattr(weights, "values", weights), dtype=np.float64)


def softmax_with_temperature(logits: np.ndarray, temperature: float) -> ProbabilitySet:
    """Softmax of logits / temperature; the row argmax is that of the raw logits.

    Dividing by a positive temperature never changes the row ranking, so
    predictions (and hence accuracy) are unchanged; only confidences move.
    """
    logits = _check_logits(logits)
    t = float(temperature)
    if not (math.isfinite(t) and t > 0.0):
        raise ValueError(f"temperature must be positive and finite, got {temperature!r}")
    z = logits / t
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    predictions = np.argmax(logits, axis=1)
    confidences = p[np.arange(p.shape[0]), predictions]
    return ProbabilitySet(probs=p, predictions=predictions, confidences=confidences)


def _minimize_temperature(objective) -> tuple[float, float, bool]:
    """Grid bracket plus golden-section refinement of a scalar objective over t.

    Returns (t_star, value, hit_bound). The returned value is the best of
    all evaluated points, so it is never above any grid value. Ties prefer
    the smaller temperature.
    """
    grid = np.exp(np.linspace(math.log(T_MIN), math.log(T_MAX), _GRID_SIZE))
    best_t = grid[0]
    best_v = objective(best_t)
    best_i = 0
    for i in range(1, _GRID_SIZE):
        v = objective(grid[i])
        if v < best_v:
            best_t, best_v, best_i = grid[i], v, i

    lo = grid[max(best_i - 1, 0)]
    hi = grid[min(best_i + 1, _GRID_SIZE - 1)]
    a, b = math.log(lo), math.log(hi)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = objective(math.exp(c))
    fd = objective(math.exp(d))
    for t_log, v in ((c, fc), (d, fd)):
        if v < best_v or (v == best_v and math.exp(t_log) < best_t):
            best_t, best_v = math.exp(t_log), v
    iters = 0
    while math.exp(b) - math.exp(a) > SEARCH_TOL and iters < 200:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(math.exp(c))
            t_new, v_new = math.exp(c), fc
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(math.exp(d))
            t_new, v_new = math.exp(d), fd
        if v_new < best_v or (v_new == best_v and t_new < best_t):
            best_t, best_v = t_new, v_new
        iters += 1
    hit_bound = best_t <= T_MIN + SEARCH_TOL or best_t >= T_MAX - SEARCH_TOL
    return float(best_t), float(best_v), hit_bound


def fit_temperature_nll(logits: np.ndarray, labels: np.ndarray) -> TemperatureParam:
    """Fit the temperature minimizing NLL on held-out logits.

    Degenerate input (all logit rows identical and all labels identical)
    returns the upper temperature bound with the degenerate flag set.
    """
    logits = _check_logits(logits)
    labels = np.asarray(labels)
    if np.all(logits == logits[0]) and np.all(labels == labels.flat[0]):
        return TemperatureParam(t=T_MAX, degenerate=True)

    def objective(t: float) -> float:
        return nll(softmax_with_temperature(logits, t), labels)

    t_star, _, hit_bound = _minimize_temperature(objective)
    return TemperatureParam(t=t_star, degenerate=hit_bound)


def fit_oracle_temperature(target_logits: np.ndarray, target_labels: np.ndarray) -> TemperatureParam:
    """Fit a temperature directly on labeled evaluation-domain data.

    An upper reference: the same NLL search as ``fit_temperature_nll`` run
    on the domain where calibration is measured.
    """
    return fit_temperature_nll(target_logits, target_labels)


def fit_cpcs_temperature(logits: np.ndarray, labels: np.ndarray, weights) -> TemperatureParam:
    """Fit a temperature minimizing the importance-weighted Brier score.

    The objective is sum(w_i * bs_i) / sum(w_i) where bs_i is the
    per-sample Brier score at the candidate temperature. Weight vectors
    concentrated on few samples can drive the optimum to a bound; the
    degenerate flag reports that.
    """
    logits = _check_logits(logits)
    n, k = logits.shape
    w = _weight_values(weights)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValueError("weights must be finite and non-negative")
    w_total = float(w.sum())
    if w_total <= 0.0:
        raise ValueError("weights sum to zero")
    labels = np.asarray(labels)
    onehot_rows = np.arange(n)

    def objective(t: float) -> float:
        p = softmax_with_temperature(logits, t).probs.copy()
        p[onehot_rows, labels] -= 1.0
        per_sample = (p * p).sum(axis=1) / k
        return float(np.dot(w, per_sample)) / w_total

    t_star, _, hit_bound = _minimize_temperature(objective)
    return TemperatureParam(t=t_star, degenerate=hit_bound)


def _softmax_ce(transformed: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(transformed) and its gradient in the logits.

    Overflow is not a programming error here: a non-finite loss is the
    divergence signal the caller turns into DegeneracyError.
    """
    n = transformed.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        shifted = transformed - transformed.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        denom = expz.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(denom)
        loss = -float(log_probs[np.arange(n), labels].sum()) / n
        grad = expz / denom
        grad[np.arange(n), labels] -= 1.0
        grad /= n
    return loss, grad


def _fit_affine(logits: np.ndarray, labels: np.ndarray, kind: str, config: ScalingFitConfig) -> AffineScaleParam:
    logits = _check_logits(logits)
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels must have shape (n,) with values in [0, K)")
    if kind == "vector":
        scale = np.ones(k)
    else:
        scale = np.eye(k)
    bias = np.zeros(k)

    lr = config.learning_rate
    prev_loss = math.inf
    initial_loss = math.nan
    converged = False
    iterations = 0
    for it in range(config.max_iterations):
        transformed = logits * scale + bias if kind == "vector" else logits @ scale.T + bias
        loss, grad = _softmax_ce(transformed, labels)
        if not math.isfinite(loss):
            raise DegeneracyError(f"{kind} scaling diverged: non-finite loss at iteration {it}")
        if it == 0:
            initial_loss = loss
        if prev_loss - loss < config.min_improvement and it > 0:
            converged = True
            break
        prev_loss = loss
        if kind == "vector":
            scale = scale - lr * (grad * logits).sum(axis=0)
        else:
            scale = scale - lr * (grad.T @ logits)
        bias = bias - lr * grad.sum(axis=0)
        iterations = it + 1

    transformed = logits * scale + bias if kind == "vector" else logits @ scale.T + bias
    final_loss, _ = _softmax_ce(transformed, labels)
    if not math.isfinite(final_loss):
        raise DegeneracyError(f"{kind} scaling diverged: non-finite final loss")
    return AffineScaleParam(
        scale=scale,
        bias=bias,
        kind=kind,
        iterations=iterations,
        converged=converged,
        initial_loss=initial_loss,
        final_loss=final_loss,
    )


def fit_vector_scaling(
    logits: np.ndarray, labels: np.ndarray, config: ScalingFitConfig | None = None
) -> AffineScaleParam:
    """Fit per-class scale and bias by full-batch gradient descent on NLL."""
    return _fit_affine(logits, labels, "vector", config or ScalingFitConfig())


def fit_matrix_scaling(
    logits: np.ndarray, labels: np.ndarray, config: ScalingFitConfig | None = None
) -> AffineScaleParam:
    """Fit a full K x K transform and bias by full-batch gradient descent on NLL."""
    return _fit_affine(logits, labels, "matrix", config or ScalingFitConfig())


def apply_affine_scaling(logits: np.ndarray, param: AffineScaleParam) -> ProbabilitySet:
    """Apply a fitted affine recalibration map to logits.

    Unlike temperature scaling, the affine map can reorder classes, so
    predictions come from the transformed logits.
    """
    logits = _check_logits(logits)
    if param.kind == "vector":
        transformed = logits * param.scale + param.bias
    elif param.kind == "matrix":
        transformed = logits @ param.scale.T + param.bias
    else:
        raise ValueError(f"unknown affine scaling kind {param.kind!r}")
    z = transformed - transformed.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    predictions = np.argmax(p, axis=1)
    confidences = p[np.arange(p.shape[0]), predictions]
    return ProbabilitySet(probs=p, predictions=predictions, confidences=confidences)

"""Importance-weighted calibration-error estimation and temperature search.

The estimator family shares one structure: per-sample contributions u_i to
the weighted calibration error, optionally corrected by control variates
with known expectations. Two variates are available, the transformed
importance weights (expectation 1 under the source marginal) and the
correctness indicator (expectation equal to the mean confidence when the
model is calibrated). They can be applied singly, jointly (one linear
system), or serially (the second stage adjusts the residuals of the
first). The temperature and the weight-flattening exponent lambda are
optimized jointly over [T_MIN, T_MAX] x [0, 1] by a coarse log grid
followed by simplex refinement; the objective is piecewise smooth at best
(argmax, binning, absolute values), so the search is derivative-free.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .density_ratio import WeightVector
from .errors import DegeneracyError
from .metrics import bin_indices, per_sample_residuals
from .scaling import T_MAX, T_MIN, SEARCH_TOL, TemperatureParam, softmax_with_temperature

__all__ = [
    "ControlVariateCoefficients",
    "EstimatorMode",
    "TransCalSolution",
    "apply_control_variate",
    "iwece_objective",
    "optimize_transcal",
    "parallel_control_variate",
    "renyi_diagnostic",
    "serial_control_variate",
    "transcal_objective",
]

_T_GRID_SIZE = 40
_LAMBDA_GRID_SIZE = 11
_MAX_REFINE_EVALS = 500


class EstimatorMode(enum.Enum):
    """Variance-reduction configuration for the weighted-error estimate."""

    PLAIN_IWECE = "plain_iwece"
    CV_WEIGHTS_ONLY = "cv_weights_only"
    CV_CORRECTNESS_ONLY = "cv_correctness_only"
    CV_PARALLEL = "cv_parallel"
    CV_SERIAL = "cv_serial"


@dataclass(frozen=True)
class ControlVariateCoefficients:
    """Fitted control-variate coefficients and the moments behind them.

    ``eta2`` and the t2 moments are None for single-variate corrections.
    ``flags`` records degeneracies (constant variates, singular systems).
    """

    eta1: float
    eta2: float | None = None
    cov_u_t1: float = 0.0
    var_t1: float = 0.0
    cov_u_t2: float | None = None
    var_t2: float | None = None
    cov_t1_t2: float | None = None
    flags: tuple[str, ...] = ()


@dataclass
class TransCalSolution:
    """Joint (temperature, lambda) optimum with its search trace."""

    t_star: TemperatureParam
    lambda_star: float
    objective_value: float
    mode: EstimatorMode
    coefficients: ControlVariateCoefficients | None
    trace: list[tuple[float, float, float]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def _check_samples(u: np.ndarray, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite entries")
    return u


def _moments(u: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    """Population covariance Cov(u, t) and variance Var(t)."""
    du = u - u.mean()
    dt = t - t.mean()
    return float((du * dt).mean()), float((dt * dt).mean())


def apply_control_variate(
    u_samples: np.ndarray, t_samples: np.ndarray, tau: float
) -> tuple[float, np.ndarray, ControlVariateCoefficients]:
    """Regression-adjust samples with one control variate of known mean tau.

    The optimal coefficient is eta = -Cov(u, t) / Var(t); the adjusted
    samples are u_i + eta * (t_i - tau) and the returned estimate is their
    mean. A variate with zero variance leaves the samples unchanged and is
    flagged. Adjusted samples are returned so corrections can be chained.
    """
    u = _check_samples(u_samples, "u_samples")
    t = _check_samples(t_samples, "t_samples")
    if u.shape != t.shape:
        raise ValueError("u_samples and t_samples must have the same length")
    tau = float(tau)
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    cov, var = _moments(u, t)
    if var == 0.0:
        coeffs = ControlVariateCoefficients(
            eta1=0.0, cov_u_t1=cov, var_t1=var, flags=("constant_variate",)
        )
        return float(u.mean()), u.copy(), coeffs
    eta = -cov / var
    adjusted = u + eta * (t - tau)
    estimate = float(u.mean()) + eta * (float(t.mean()) - tau)
    coeffs = ControlVariateCoefficients(eta1=eta, cov_u_t1=cov, var_t1=var)
    return estimate, adjusted, coeffs


def serial_control_variate(
    u_samples: np.ndarray,
    weights: np.ndarray,
    correctness: np.ndarray,
    mean_confidence: float,
) -> tuple[float, ControlVariateCoefficients]:
    """Two-stage correction: first the weight variate, then correctness.

    Stage one adjusts with the importance weights against their known
    source mean of 1. Stage two adjusts the stage-one residual samples
    with the correctness indicator against ``mean_confidence``, the value
    correctness would average to under perfect calibration. Constant
    correctness (all right or all wrong) skips stage two with a flag.
    """
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    est1, adjusted, c1 = apply_control_variate(u_samples, w, 1.0)
    r = _check_samples(correctness, "correctness")
    cov2, var2 = _moments(adjusted, r)
    if var2 == 0.0:
        coeffs = ControlVariateCoefficients(
            eta1=c1.eta1,
            eta2=None,
            cov_u_t1=c1.cov_u_t1,
            var_t1=c1.var_t1,
            cov_u_t2=cov2,
            var_t2=var2,
            flags=c1.flags + ("constant_correctness",),
        )
        return est1, coeffs
    eta2 = -cov2 / var2
    estimate = float(adjusted.mean()) + eta2 * (float(r.mean()) - float(mean_confidence))
    coeffs = ControlVariateCoefficients(
        eta1=c1.eta1,
        eta2=eta2,
        cov_u_t1=c1.cov_u_t1,
        var_t1=c1.var_t1,
        cov_u_t2=cov2,
        var_t2=var2,
        flags=c1.flags,
    )
    return estimate, coeffs


def parallel_control_variate(
    u_samples: np.ndarray,
    t1_samples: np.ndarray,
    tau1: float,
    t2_samples: np.ndarray,
    tau2: float,
) -> tuple[float, ControlVariateCoefficients]:
    """Joint two-variate correction from the 2 x 2 stationarity system.

    Solves
        Var(t1) eta1 + Cov(t1, t2) eta2 = -Cov(u, t1)
        Cov(t1, t2) eta1 + Var(t2) eta2 = -Cov(u, t2)
    and returns mean(u) + eta1 (mean(t1) - tau1) + eta2 (mean(t2) - tau2).
    A singular system falls back to the single-variate correction on t1
    (flagged); if t1 is constant too, the plain mean is returned.
    """
    u = _check_samples(u_samples, "u_samples")
    t1 = _check_samples(t1_samples, "t1_samples")
    t2 = _check_samples(t2_samples, "t2_samples")
    if u.shape != t1.shape or u.shape != t2.shape:
        raise ValueError("sample arrays must share one length")
    cov_u1, var1 = _moments(u, t1)
    cov_u2, var2 = _moments(u, t2)
    cov12, _ = _moments(t1, t2)
    det = var1 * var2 - cov12 * cov12
    if det <= 1e-12 * var1 * var2 or var1 == 0.0 or var2 == 0.0:
        est, _, c1 = apply_control_variate(u, t1, tau1)
        coeffs = ControlVariateCoefficients(
            eta1=c1.eta1,
            eta2=None,
            cov_u_t1=cov_u1,
            var_t1=var1,
            cov_u_t2=cov_u2,
            var_t2=var2,
            cov_t1_t2=cov12,
            flags=c1.flags + ("singular_system_fallback",),
        )
        return est, coeffs
    system = np.array([[var1, cov12], [cov12, var2]])
    rhs = np.array([-cov_u1, -cov_u2])
    eta1, eta2 = np.linalg.solve(system, rhs)
    estimate = (
        float(u.mean())
        + eta1 * (float(t1.mean()) - float(tau1))
        + eta2 * (float(t2.mean()) - float(tau2))
    )
    coeffs = ControlVariateCoefficients(
        eta1=float(eta1),
        eta2=float(eta2),
        cov_u_t1=cov_u1,
        var_t1=var1,
        cov_u_t2=cov_u2,
        var_t2=var2,
        cov_t1_t2=cov12,
    )
    return estimate, coeffs


def _weight_array(weights, n: int | None = None) -> np.ndarray:
    values = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 1:
        raise ValueError("weights must be a non-empty 1-d array")
    if n is not None and values.shape[0] != n:
        raise ValueError(f"weights must have length {n}, got {values.shape[0]}")
    if not np.all(np.isfinite(values)) or np.any(values < 0.0):
        raise ValueError("weights must be finite and non-negative")
    return values


def iwece_objective(logits: np.ndarray, labels: np.ndarray, weights, t: float) -> float:
    """Mean weighted per-sample residual (1/n) sum_i w_i |r_i - c_i(t)|.

    The bin-free weighted surrogate: with weights drawn as the true
    density ratio it estimates the mean target residual by importance
    sampling.
    """
    probs = softmax_with_temperature(logits, t)
    w = _weight_array(weights, probs.num_samples)
    residuals = per_sample_residuals(probs, labels)
    return float(np.mean(w * residuals))


class _ObjectiveContext:
    """Precomputed arrays for repeated (t, lambda) objective evaluations."""

    def __init__(self, logits: np.ndarray, labels: np.ndarray, weight_values: np.ndarray, num_bins: int):
        logits = np.ascontiguousarray(logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 2:
            raise ValueError("logits must be a 2-d array with at least two classes")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits contain non-finite entries")
        n = logits.shape[0]
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,) or labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError("labels must have shape (n,) with values in [0, K)")
        if weight_values.shape[0] != n:
            raise ValueError(f"weights must have length {n}, got {weight_values.shape[0]}")
        if num_bins < 1:
            raise ValueError("num_bins must be positive")
        self.logits = logits
        self.n = n
        self.num_bins = int(num_bins)
        self.weights = weight_values
        self.predictions = np.argmax(logits, axis=1)
        self.correct = (self.predictions == labels).astype(np.float64)
        self._rows = np.arange(n)

    def confidences(self, t: float) -> np.ndarray:
        z = self.logits / t
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p[self._rows, self.predictions] / p.sum(axis=1)

    def samples(self, t: float, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-sample weighted binned-gap contributions at (t, lambda).

        u_i = w_i^lam * |A_m - C_m| for the sample's confidence bin, where
        A_m and C_m are the bin's weighted accuracy and weighted mean
        confidence. The mean of u is the binned importance-weighted
        calibration error with mass convention 1/n.
        """
        conf = self.confidences(t)
        wl = np.power(self.weights, lam)
        idx = bin_indices(conf, self.num_bins)
        weight_sum = np.bincount(idx, weights=wl, minlength=self.num_bins)
        acc_sum = np.bincount(idx, weights=wl * self.correct, minlength=self.num_bins)
        conf_sum = np.bincount(idx, weights=wl * conf, minlength=self.num_bins)
        gap = np.zeros(self.num_bins)
        occupied = weight_sum > 0.0
        gap[occupied] = np.abs(
            acc_sum[occupied] / weight_sum[occupied] - conf_sum[occupied] / weight_sum[occupied]
        )
        return wl * gap[idx], wl, conf

    def components(
        self, t: float, lam: float, mode: EstimatorMode
    ) -> tuple[float, ControlVariateCoefficients | None]:
        u, wl, conf = self.samples(t, lam)
        if mode is EstimatorMode.PLAIN_IWECE:
            return float(u.mean()), None
        if mode is EstimatorMode.CV_WEIGHTS_ONLY:
            estimate, _, coeffs = apply_control_variate(u, wl, 1.0)
            return estimate, coeffs
        if mode is EstimatorMode.CV_CORRECTNESS_ONLY:
            estimate, _, coeffs = apply_control_variate(u, self.correct, float(conf.mean()))
            return estimate, coeffs
        if mode is EstimatorMode.CV_PARALLEL:
            return parallel_control_variate(u, wl, 1.0, self.correct, float(conf.mean()))
        if mode is EstimatorMode.CV_SERIAL:
            return serial_control_variate(u, wl, self.correct, float(conf.mean()))
        raise ValueError(f"unknown estimator mode {mode!r}")

    def value(self, t: float, lam: float, mode: EstimatorMode) -> float:
        return self.components(t, lam, mode)[0]


def transcal_objective(
    logits: np.ndarray,
    labels: np.ndarray,
    weights,
    t: float,
    lam: float,
    mode: EstimatorMode | str = EstimatorMode.CV_SERIAL,
    bins: int = 15,
) -> float:
    """Evaluate the optimizer's estimate of target calibration error.

    The raw weights are flattened by w^lam, the binned weighted gap is
    decomposed into per-sample contributions, and the mode's
    control-variate correction is applied.
    """
    mode = EstimatorMode(mode) if not isinstance(mode, EstimatorMode) else mode
    values = _weight_array(weights)
    ctx = _ObjectiveContext(logits, labels, values, int(bins))
    if not (0.0 <= float(lam) <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not (float(t) > 0.0 and math.isfinite(float(t))):
        raise ValueError(f"temperature must be positive and finite, got {t}")
    return ctx.value(float(t), float(lam), mode)


def optimize_transcal(
    logits: np.ndarray,
    labels: np.ndarray,
    weights,
    mode: EstimatorMode | str = EstimatorMode.CV_SERIAL,
    bins: int = 15,
    freeze_lambda: bool = False,
) -> TransCalSolution:
    """Jointly search temperature and lambda minimizing the corrected estimate.

    A 40 x 11 log-spaced grid over (t, lambda) seeds a Nelder-Mead
    refinement (bounds enforced by clamping, tolerance 1e-4, at most 500
    refinement evaluations). Grid ties resolve to the smaller temperature,
    then the smaller lambda. ``freeze_lambda`` pins lambda at 1 so only
    the temperature is searched (the no-bias-reduction variant);
    ``mode=PLAIN_IWECE`` drops the variance correction instead. The search
    is deterministic and every evaluation is recorded in the trace.
    """
    mode = EstimatorMode(mode) if not isinstance(mode, EstimatorMode) else mode
    if isinstance(weights, WeightVector) and weights.kind != "raw":
        raise ValueError("optimize_transcal expects raw (untransformed) weights")
    values = _weight_array(weights)
    if float(values.max()) == 0.0:
        raise DegeneracyError(
            "importance weights are all zero; the density-ratio stage "
            "produced a degenerate weight vector"
        )
    ctx = _ObjectiveContext(logits, np.asarray(labels), values, int(bins))

    t_grid = np.exp(np.linspace(math.log(T_MIN), math.log(T_MAX), _T_GRID_SIZE))
    lam_grid = np.array([1.0]) if freeze_lambda else np.linspace(0.0, 1.0, _LAMBDA_GRID_SIZE)
    trace: list[tuple[float, float, float]] = []
    best_v = math.inf
    best_t = t_grid[0]
    best_lam = lam_grid[0]
    for t in t_grid:
        for lam in lam_grid:
            v = ctx.value(float(t), float(lam), mode)
            trace.append((float(t), float(lam), v))
            if v < best_v:
                best_v, best_t, best_lam = v, float(t), float(lam)

    log_lo, log_hi = math.log(T_MIN), math.log(T_MAX)

    def unpack(x: np.ndarray) -> tuple[float, float]:
        t = math.exp(min(max(float(x[0]), log_lo), log_hi))
        if freeze_lambda:
            return t, 1.0
        return t, min(max(float(x[1]), 0.0), 1.0)

    def fun(x: np.ndarray) -> float:
        t, lam = unpack(x)
        v = ctx.value(t, lam, mode)
        trace.append((t, lam, v))
        return v

    if freeze_lambda:
        x0 = np.array([math.log(best_t)])
        nm_bounds = [(log_lo, log_hi)]
    else:
        x0 = np.array([math.log(best_t), best_lam])
        nm_bounds = [(log_lo, log_hi), (0.0, 1.0)]
    result = minimize(
        fun,
        x0,
        method="Nelder-Mead",
        bounds=nm_bounds,
        options={"xatol": SEARCH_TOL, "fatol": SEARCH_TOL, "maxfev": _MAX_REFINE_EVALS},
    )
    refined = bool(result.fun < best_v)
    if refined:
        chosen_t, chosen_lam = unpack(result.x)
    else:
        chosen_t, chosen_lam = best_t, best_lam

    objective_value, coefficients = ctx.components(chosen_t, chosen_lam, mode)
    at_bound = chosen_t <= T_MIN + SEARCH_TOL or chosen_t >= T_MAX - SEARCH_TOL
    transformed_max = float(np.power(values, chosen_lam).max())
    diagnostics = {
        "max_weight_raw": float(values.max()),
        "max_weight_transformed": transformed_max,
        "renyi_raw": {str(a): renyi_diagnostic(values, a) for a in (0.5, 1.0, 2.0)},
        "grid_evaluations": int(len(t_grid) * len(lam_grid)),
        "total_evaluations": len(trace),
        "refined": refined,
        "freeze_lambda": bool(freeze_lambda),
    }
    return TransCalSolution(
        t_star=TemperatureParam(t=chosen_t, degenerate=at_bound),
        lambda_star=float(chosen_lam),
        objective_value=objective_value,
        mode=mode,
        coefficients=coefficients,
        trace=trace,
        diagnostics=diagnostics,
    )


def renyi_diagnostic(weights, alpha: float) -> float:
    """Empirical exponentiated Renyi divergence of order alpha + 1.

    Computes (mean of w^(alpha + 1))^(1/alpha) over source-drawn weights,
    the sample version of the divergence term governing the variance of
    importance-weighted estimates. Unit weights give exactly 1. Returns
    +inf when the power moment overflows.
    """
    values = _weight_array(weights)
    alpha = float(alpha)
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha}")
    with np.errstate(over="ignore"):
        moment = float(np.mean(np.power(values, alpha + 1.0)))
    if not math.isfinite(moment):
        return math.inf
    return moment ** (1.0 / alpha)

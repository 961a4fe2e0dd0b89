"""Calibration metrics for categorical probability predictions.

Binning convention used everywhere in this package: B equal-width bins on
[0, 1], where bin m (1-indexed) covers ((m - 1)/B, m/B]. Bins are closed on
the right; a confidence of exactly 0 is assigned to bin 1. Empty bins
contribute nothing to the expected calibration error. Ties in a row argmax
resolve to the lowest class index.

Accumulation order is fixed (per-bin sums in sample order, cross-bin
reductions in bin index order) so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BinningConfig",
    "ProbabilitySet",
    "ReliabilityBins",
    "bin_indices",
    "brier",
    "ece",
    "metric_report",
    "nll",
    "per_sample_residuals",
    "reliability_bins",
    "weighted_ece",
]

PROB_CLAMP = 1e-12
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class BinningConfig:
    """Equal-width binning of the confidence axis."""

    num_bins: int = 15

    def __post_init__(self) -> None:
        if not isinstance(self.num_bins, (int, np.integer)) or self.num_bins < 1:
            raise ValueError(f"num_bins must be a positive integer, got {self.num_bins!r}")


def _num_bins(bins: BinningConfig | int) -> int:
    if isinstance(bins, BinningConfig):
        return int(bins.num_bins)
    if not isinstance(bins, (int, np.integer)) or bins < 1:
        raise ValueError(f"bins must be a positive integer or BinningConfig, got {bins!r}")
    return int(bins)


@dataclass
class ProbabilitySet:
    """Probability rows with cached argmax predictions and row confidences.

    Attributes
    ----------
    probs : ndarray of shape (n, K)
        Per-class probabilities; each row sums to 1 within ``ROW_SUM_TOL``.
    predictions : ndarray of shape (n,)
        Index of a maximal entry per row (lowest index on ties).
    confidences : ndarray of shape (n,)
        Maximum probability per row, ``probs[i, predictions[i]]``.
    """

    probs: np.ndarray
    predictions: np.ndarray
    confidences: np.ndarray

    @classmethod
    def from_probabilities(
        cls, probs: np.ndarray, predictions: np.ndarray | None = None
    ) -> "ProbabilitySet":
        """Validate a probability matrix and attach argmax statistics.

        Parameters
        ----------
        probs : array_like of shape (n, K)
            Rows must be finite, lie in [0, 1] and sum to 1 within 1e-9.
        predictions : array_like of shape (n,), optional
            Externally supplied predicted classes. Each must attain the
            row maximum of ``probs``; by default the first row maximum is
            used.
        """
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ValueError("probs must be a non-empty 2-d array of shape (n, K)")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs contains non-finite entries")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        row_sums = probs.sum(axis=1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > ROW_SUM_TOL:
            raise ValueError(
                f"probability rows must sum to 1 within {ROW_SUM_TOL:g} "
                f"(worst deviation {worst:.3g})"
            )
        row_max = probs.max(axis=1)
        n = probs.shape[0]
        if predictions is None:
            predictions = np.argmax(probs, axis=1)
        else:
            predictions = np.asarray(predictions, dtype=np.int64)
            if predictions.shape != (n,):
                raise ValueError("predictions must have shape (n,)")
            if np.any(predictions < 0) or np.any(predictions >= probs.shape[1]):
                raise ValueError("predictions out of class range")
            if np.any(probs[np.arange(n), predictions] != row_max):
                raise ValueError("supplied predictions do not attain the row maximum")
        confidences = probs[np.arange(n), predictions]
        return cls(probs=probs, predictions=predictions, confidences=confidences)

    @property
    def num_samples(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])


@dataclass
class ReliabilityBins:
    """Per-bin reliability summary.

    ``counts`` holds the (possibly weighted) mass per bin; ``accuracy`` and
    ``confidence`` are NaN for empty bins, which contribute nothing to
    ``ece``. ``recompute_ece`` re-derives the scalar from the stored bins
    with the same accumulation order used during construction.
    """

    num_bins: int
    counts: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray
    ece: float

    def recompute_ece(self) -> float:
        total = 0.0
        for m in range(self.num_bins):
            total += float(self.counts[m])
        value = 0.0
        for m in range(self.num_bins):
            if self.counts[m] > 0.0:
                value += (self.counts[m] / total) * abs(self.accuracy[m] - self.confidence[m])
        return value


def _check_labels(labels: np.ndarray, num_classes: int, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int64, copy=True)
        if not np.all(as_int == labels):
            raise ValueError("labels must be integers")
        labels = as_int
    labels = labels.astype(np.int64, copy=False)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def _check_weights(weights: np.ndarray, n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights contain non-finite entries")
    if np.any(weights < 0.0):
        raise ValueError("weights must be non-negative")
    return weights


def bin_indices(confidences: np.ndarray, bins: BinningConfig | int = 15) -> np.ndarray:
    """Map confidences in [0, 1] to 0-based bin indices.

    Bin m (0-based) covers (m/B, (m + 1)/B]; exactly 0 maps to bin 0.
    """
    num_bins = _num_bins(bins)
    confidences = np.asarray(confidences, dtype=np.float64)
    edges = np.arange(num_bins + 1) / num_bins
    idx = np.searchsorted(edges, confidences, side="left") - 1
    return np.clip(idx, 0, num_bins - 1)


def reliability_bins(
    probs: ProbabilitySet,
    labels: np.ndarray,
    bins: BinningConfig | int = 15,
    weights: np.ndarray | None = None,
) -> ReliabilityBins:
    """Bin predictions by confidence and summarize accuracy per bin.

    Parameters
    ----------
    probs : ProbabilitySet
        Predictions to evaluate.
    labels : array_like of shape (n,)
        Integer class labels in [0, K).
    bins : BinningConfig or int
        Number of equal-width confidence bins.
    weights : array_like of shape (n,), optional
        Non-negative per-sample weights; unit weights when omitted.
        Weights must not all be zero.

    Returns
    -------
    ReliabilityBins
        Weighted per-bin counts, accuracies, confidences and the expected
        calibration error computed from them.
    """
    num_bins = _num_bins(bins)
    n = probs.num_samples
    labels = _check_labels(labels, probs.num_classes, n)
    if weights is None:
        weights = np.ones(n, dtype=np.float64)
    else:
        weights = _check_weights(weights, n)

    correct = (probs.predictions == labels).astype(np.float64)
    idx = bin_indices(probs.confidences, num_bins)
    weight_sum = np.bincount(idx, weights=weights, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=weights * correct, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=weights * probs.confidences, minlength=num_bins)

    total = 0.0
    for m in range(num_bins):
        total += weight_sum[m]
    if total <= 0.0:
        raise ValueError("weights sum to zero; nothing to bin")

    accuracy = np.full(num_bins, np.nan)
    confidence = np.full(num_bins, np.nan)
    value = 0.0
    for m in range(num_bins):
        if weight_sum[m] > 0.0:
            accuracy[m] = acc_sum[m] / weight_sum[m]
            confidence[m] = conf_sum[m] / weight_sum[m]
            value += (weight_sum[m] / total) * abs(accuracy[m] - confidence[m])
    return ReliabilityBins(
        num_bins=num_bins,
        counts=weight_sum,
        accuracy=accuracy,
        confidence=confidence,
        ece=value,
    )


def ece(probs: ProbabilitySet, labels: np.ndarray, bins: BinningConfig | int = 15) -> float:
    """Expected calibration error with equal-width right-closed bins.

    Sum over bins of (bin count / n) times the absolute gap between bin
    accuracy and bin mean confidence.
    """
    return reliability_bins(probs, labels, bins).ece


def weighted_ece(
    probs: ProbabilitySet,
    labels: np.ndarray,
    weights: np.ndarray,
    bins: BinningConfig | int = 15,
) -> float:
    """Importance-weighted expected calibration error.

    Per-bin accuracy and confidence are weighted means; the bin mass is the
    bin's weight share of the total weight. With unit weights this equals
    ``ece`` exactly (identical code path).
    """
    n = probs.num_samples
    weights = _check_weights(weights, n)
    return reliability_bins(probs, labels, bins, weights=weights).ece


def nll(probs: ProbabilitySet, labels: np.ndarray, mean: bool = False) -> float:
    """Negative log-likelihood of the true labels.

    Summed over samples by default; ``mean=True`` divides by n. Predicted
    probabilities are clamped below at ``PROB_CLAMP`` before the log.
    """
    n = probs.num_samples
    labels = _check_labels(labels, probs.num_classes, n)
    p = probs.probs[np.arange(n), labels]
    p = np.maximum(p, PROB_CLAMP)
    total = -float(np.sum(np.log(p)))
    if mean:
        return total / n
    return total


def brier(probs: ProbabilitySet, labels: np.ndarray) -> float:
    """Brier score: mean over samples of the per-class squared error / K."""
    n = probs.num_samples
    k = probs.num_classes
    labels = _check_labels(labels, k, n)
    diff = probs.probs.copy()
    diff[np.arange(n), labels] -= 1.0
    per_sample = (diff * diff).sum(axis=1) / k
    return float(per_sample.mean())


def per_sample_residuals(probs: ProbabilitySet, labels: np.ndarray) -> np.ndarray:
    """Per-sample calibration residual |1(prediction correct) - confidence|.

    A bin-free surrogate for the per-sample contribution to calibration
    error; each value lies in [0, 1].
    """
    n = probs.num_samples
    labels = _check_labels(labels, probs.num_classes, n)
    correct = (probs.predictions == labels).astype(np.float64)
    return np.abs(correct - probs.confidences)


def metric_report(
    probs: ProbabilitySet, labels: np.ndarray, bins: BinningConfig | int = 15
) -> dict:
    """All scalar metrics for one evaluation split, as a JSON-ready dict."""
    n = probs.num_samples
    labels = _check_labels(labels, probs.num_classes, n)
    accuracy = float((probs.predictions == labels).mean())
    return {
        "num_samples": int(n),
        "num_classes": int(probs.num_classes),
        "num_bins": _num_bins(bins),
        "accuracy": accuracy,
        "mean_confidence": float(probs.confidences.mean()),
        "ece": ece(probs, labels, bins),
        "nll_sum": nll(probs, labels, mean=False),
        "nll_mean": nll(probs, labels, mean=True),
        "brier": brier(probs, labels),
    }

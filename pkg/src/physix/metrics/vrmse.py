"""Metric kernels: VRMSE, channel exclusion, CIs, model ranking.

VRMSE normalizes the squared error by the spatial variance of the truth,
so fields of very different magnitude become comparable:

    sqrt( mean((pred - truth)^2) / (mean((truth - truth_mean)^2) + eps) )

with the mean of ``truth_mean`` taken per frame over space, and the outer
means over space and (when scoring a bucket) time. One value per field.
"""

from dataclasses import dataclass
from math import fsum

import numpy as np
from scipy.stats import rankdata

from ..errors import DataError, NonFiniteDataError, ShapeMismatchError

#: half-width multiplier for a normal-approximation 95% interval
Z_95 = 1.96

DEFAULT_BUCKETS = ((1, 1), (2, 8), (9, 26), (27, 56))


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = 1e-7
    buckets: tuple = DEFAULT_BUCKETS
    constant_threshold: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(tuple(int(v) for v in b) for b in self.buckets))
        prev_hi = 0
        for lo, hi in self.buckets:
            if lo > hi or lo <= prev_hi:
                raise DataError(f"buckets must be ordered and non-overlapping, got {self.buckets}")
            prev_hi = hi
        if self.epsilon < 0 or self.constant_threshold < 0:
            raise DataError("epsilon and constant_threshold must be non-negative")


def _as_field(arr, name) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim < 2:
        raise ShapeMismatchError(f"{name} needs at least (H, W) dims, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise NonFiniteDataError(f"non-finite values in {name}")
    return out


def vrmse(pred, truth, epsilon: float = 1e-7) -> float:
    """Variance-weighted RMSE of one field, pooled over leading dims."""
    p = _as_field(pred, "pred")
    t = _as_field(truth, "truth")
    if p.shape != t.shape:
        raise ShapeMismatchError(f"pred {p.shape} vs truth {t.shape}")
    num = np.mean((p - t) ** 2)
    spatial_mean = t.mean(axis=(-2, -1), keepdims=True)
    var = np.mean((t - spatial_mean) ** 2)
    return float(np.sqrt(num / (var + epsilon)))


def channel_vrmse(pred, truth, epsilon: float = 1e-7) -> np.ndarray:
    """Per-channel VRMSE for (..., C, H, W) arrays."""
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim < 3:
        raise ShapeMismatchError(f"need matching (..., C, H, W), got {p.shape} vs {t.shape}")
    C = p.shape[-3]
    return np.array(
        [vrmse(np.take(p, c, axis=-3), np.take(t, c, axis=-3), epsilon) for c in range(C)]
    )


def exclude_constant_channels(trajectories, threshold: float = 1e-10) -> np.ndarray:
    """Boolean inclusion mask over channels.

    A channel is dropped only when its mean per-pixel temporal variance
    stays below ``threshold`` in every trajectory; varying anywhere keeps
    it in the metric.
    """
    trajs = [np.asarray(t, dtype=np.float64) for t in trajectories]
    if not trajs:
        raise DataError("need at least one trajectory to decide channel inclusion")
    C = None
    for arr in trajs:
        if arr.ndim != 4:
            raise ShapeMismatchError(f"trajectories must be (T, C, H, W), got {arr.shape}")
        if C is None:
            C = arr.shape[1]
        elif arr.shape[1] != C:
            raise ShapeMismatchError("trajectories disagree on channel count")
    included = np.zeros(C, dtype=bool)
    for arr in trajs:
        var = arr.var(axis=0).mean(axis=(-2, -1))
        included |= var >= threshold
    return included


def confidence_interval(scores) -> tuple:
    """Normal-approximation 95% interval: (mean, half_width)."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size < 2:
        raise DataError(f"confidence interval needs at least 2 scores, got {s.size}")
    if not np.isfinite(s).all():
        raise NonFiniteDataError("non-finite scores")
    if np.all(s == s[0]):
        return float(s[0]), 0.0
    mean = fsum(s) / s.size
    sd = float(np.sqrt(fsum((s - mean) ** 2) / s.size))
    return mean, Z_95 * sd / float(np.sqrt(s.size))


def rank_table(scores: dict) -> dict:
    """Per-dataset ranks (1 = best/lowest score, ties share mean rank).

    ``scores`` maps model -> dataset -> value; every model must cover
    every dataset.
    """
    models = sorted(scores)
    if not models:
        raise DataError("empty score table")
    datasets = sorted({d for m in models for d in scores[m]})
    for m in models:
        missing = [d for d in datasets if d not in scores[m]]
        if missing:
            raise DataError(f"model {m!r} missing scores for {missing}")
    out = {}
    for d in datasets:
        col = np.array([float(scores[m][d]) for m in models])
        if not np.isfinite(col).all():
            raise NonFiniteDataError(f"non-finite score in dataset {d!r}")
        ranks = rankdata(col, method="average")
        out[d] = {m: float(r) for m, r in zip(models, ranks)}
    return out


def average_rank(scores: dict) -> dict:
    """Mean of per-dataset ranks for each model (lower is better)."""
    per_dataset = rank_table(scores)
    datasets = sorted(per_dataset)
    return {
        m: fsum(per_dataset[d][m] for d in datasets) / len(datasets) for m in sorted(scores)
    }

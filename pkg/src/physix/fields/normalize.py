"""Per-channel z-score normalization with explicit state tracking."""

import numpy as np

from ..errors import ConfigError, NormalizationStateError, ShapeMismatchError
from .types import FieldSequence, NormStats


def fit_norm(sequences, epsilon: float = 1e-6) -> NormStats:
    """Fit per-channel mean/std over a list of raw training sequences.

    Statistics pool all frames and pixels of every sequence. Stds are
    floored at ``epsilon`` so constant channels stay invertible.
    """
    sequences = list(sequences)
    if not sequences:
        raise ConfigError("cannot fit normalization on an empty split")
    channels = sequences[0].spec.channels
    for seq in sequences:
        if seq.spec.channels != channels:
            raise ShapeMismatchError(
                f"channel mismatch while fitting stats: {seq.spec.channels} vs {channels}"
            )
        if seq.norm_state != "raw":
            raise NormalizationStateError("fit_norm expects raw sequences")

    count = 0
    total = np.zeros(len(channels), dtype=np.float64)
    total_sq = np.zeros(len(channels), dtype=np.float64)
    for seq in sequences:
        x = seq.data.astype(np.float64)
        count += x.shape[0] * x.shape[2] * x.shape[3]
        total += x.sum(axis=(0, 2, 3))
        total_sq += (x * x).sum(axis=(0, 2, 3))
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), epsilon)
    return NormStats(channels=channels, mean=mean, std=std, epsilon=epsilon)


def _check_channels(stats: NormStats, seq: FieldSequence):
    if stats.channels != seq.spec.channels:
        raise ShapeMismatchError(
            f"stats channels {stats.channels} do not match sequence {seq.spec.channels}"
        )


def apply_norm(stats: NormStats, seq: FieldSequence) -> FieldSequence:
    if seq.norm_state != "raw":
        raise NormalizationStateError("sequence is already normalized")
    _check_channels(stats, seq)
    mean = stats.mean.astype(np.float32)[None, :, None, None]
    std = stats.std.astype(np.float32)[None, :, None, None]
    return FieldSequence(
        data=(seq.data - mean) / std,
        spec=seq.spec,
        norm_state="normalized",
        metadata=dict(seq.metadata),
    )


def invert_norm(stats: NormStats, seq: FieldSequence) -> FieldSequence:
    if seq.norm_state != "normalized":
        raise NormalizationStateError("sequence is not normalized")
    _check_channels(stats, seq)
    mean = stats.mean.astype(np.float32)[None, :, None, None]
    std = stats.std.astype(np.float32)[None, :, None, None]
    return FieldSequence(
        data=seq.data * std + mean,
        spec=seq.spec,
        norm_state="raw",
        metadata=dict(seq.metadata),
    )


def normalize_array(stats: NormStats, data: np.ndarray) -> np.ndarray:
    """Array-level z-score for (..., C, H, W) tensors outside FieldSequence."""
    mean = stats.mean.astype(data.dtype)[:, None, None]
    std = stats.std.astype(data.dtype)[:, None, None]
    return (data - mean) / std


def denormalize_array(stats: NormStats, data: np.ndarray) -> np.ndarray:
    mean = stats.mean.astype(data.dtype)[:, None, None]
    std = stats.std.astype(data.dtype)[:, None, None]
    return data * std + mean

"""Replication schedule that equalizes per-epoch dataset contributions.

Smaller datasets are oversampled by whole-replica ceiling, then the last
replica is truncated so every dataset contributes exactly max_size
entries per epoch.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class SamplingSchedule:
    """Per-epoch index lists: dataset name -> sequence indices (replicated)."""

    factors: dict
    entries: dict
    per_epoch: int

    def epoch_order(self, seed: int) -> list:
        """Interleaved (dataset, index) order, shuffled by the epoch seed."""
        flat = [(name, idx) for name, idxs in self.entries.items() for idx in idxs]
        rng = np.random.default_rng(seed)
        rng.shuffle(flat)
        return flat


def balance_datasets(split_sizes: dict) -> SamplingSchedule:
    """Compute replication factors and index lists for one epoch.

    factor = ceil(max_size / size); each dataset's index list cycles
    0..size-1 and is truncated to exactly max_size entries.
    """
    if not split_sizes:
        raise ConfigError("balance_datasets requires at least one dataset")
    for name, size in split_sizes.items():
        if size < 1:
            raise ConfigError(f"dataset {name!r} has empty split (size {size})")
    max_size = max(split_sizes.values())
    factors = {}
    entries = {}
    for name, size in split_sizes.items():
        factor = math.ceil(max_size / size)
        idxs = (list(range(size)) * factor)[:max_size]
        factors[name] = factor
        entries[name] = idxs
    return SamplingSchedule(factors=factors, entries=entries, per_epoch=max_size)

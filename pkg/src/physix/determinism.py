"""Seeding and deterministic-mode plumbing.

``PHYSIX_DETERMINISTIC=1`` forces single-worker execution with fixed seeds
and deterministic torch kernels; ``PHYSIX_DATA_DIR`` sets the default data
root used by the CLI when a config gives relative paths.
"""

import os
import random
from pathlib import Path

import numpy as np
import torch

DETERMINISTIC_ENV = "PHYSIX_DETERMINISTIC"
DATA_DIR_ENV = "PHYSIX_DATA_DIR"


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def configure_torch() -> None:
    """Apply process-wide torch settings for reproducible runs."""
    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def derive_seed(base: int, *streams: str) -> int:
    """Stable per-purpose seed derived from a base seed and stream labels.

    Avoids reusing one RNG stream across stages, which would couple
    otherwise independent stages through draw order.
    """
    import hashlib

    h = hashlib.sha256()
    h.update(str(base).encode())
    for s in streams:
        h.update(b"/")
        h.update(str(s).encode())
    return int.from_bytes(h.digest()[:8], "big") % (2**63)

"""Checkpoint archives: a directory with config, named parameter arrays,
and a manifest.

Layout::

    <dir>/config.json     all architecture / training hyperparameters
    <dir>/params.npz      named float arrays (model parameters and buffers)
    <dir>/manifest.json   seeds, schedule summary, selection epoch, hashes

Content hashes are computed over the canonical byte content (sorted names,
dtypes, shapes, raw C-order bytes, plus the canonical config JSON), never
over container file bytes, so they are stable across archive rewrites.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def params_hash(params: dict[str, np.ndarray], config: dict | None = None) -> str:
    h = hashlib.sha256()
    if config is not None:
        h.update(canonical_json(config).encode())
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class Archive:
    config: dict
    params: dict[str, np.ndarray]
    manifest: dict
    path: Path

    @property
    def content_hash(self) -> str:
        return self.manifest["content_hash"]


def save_archive(path, config: dict, params: dict[str, np.ndarray], manifest: dict) -> str:
    """Write an archive directory and return its content hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    digest = params_hash(params, config)
    manifest = dict(manifest)
    manifest["content_hash"] = digest
    (path / "config.json").write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    with open(path / "params.npz", "wb") as f:
        np.savez(f, **params)
    return digest


def load_archive(path) -> Archive:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise DataError(f"no checkpoint archive at {path}")
    config = json.loads((path / "config.json").read_text())
    manifest = json.loads((path / "manifest.json").read_text())
    with np.load(path / "params.npz") as npz:
        params = {name: npz[name] for name in npz.files}
    if params_hash(params, config) != manifest["content_hash"]:
        raise DataError(f"checkpoint at {path} fails its content-hash check")
    return Archive(config=config, params=params, manifest=manifest, path=path)


def state_to_arrays(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in state_dict.items()}


def arrays_to_state(params: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    return {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in params.items()}

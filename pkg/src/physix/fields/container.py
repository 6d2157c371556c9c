"""Trajectory container I/O and the dataset manifest.

One file per trajectory. Layout: datasets ``/fields/<channel_id>`` of
shape (T, H, W) float32, root attributes ``dataset_name``,
``frame_interval``, ``boundary``. Files are written with timestamp
tracking disabled so identical content yields identical bytes.

The manifest is a JSON file tying together dataset descriptions, split
file lists, and the channel union for a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import h5py
import numpy as np

from ..errors import (
    ConfigError,
    DataError,
    MissingChannelError,
    NonFiniteDataError,
    ShapeMismatchError,
)
from .types import (
    Boundary,
    Channel,
    ChannelUnion,
    DatasetSpec,
    FieldSequence,
    SPATIAL_FACTOR,
    TEMPORAL_FACTOR,
)


def write_container(
    path, fields: dict, attrs: dict, coarse: dict | None = None, refined: dict | None = None
) -> None:
    """Low-level writer shared by trajectory files, refiner corpora, and rollouts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with h5py.File(tmp, "w", track_order=True) as f:
        for k, v in attrs.items():
            f.attrs[k] = v
        grp = f.create_group("fields", track_order=True)
        for name, arr in fields.items():
            grp.create_dataset(name, data=np.asarray(arr, dtype=np.float32), track_times=False)
        for group_name, group in (("coarse", coarse), ("refined", refined)):
            if group is not None:
                g = f.create_group(group_name, track_order=True)
                for name, arr in group.items():
                    g.create_dataset(name, data=np.asarray(arr, dtype=np.float32), track_times=False)
    tmp.replace(path)


def read_container(path) -> tuple[dict, dict, dict | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    with h5py.File(path, "r") as f:
        attrs = {k: f.attrs[k] for k in f.attrs}
        if "fields" not in f:
            raise DataError(f"{path}: missing /fields group")
        fields = {name: f["fields"][name][()] for name in f["fields"]}
        coarse = None
        if "coarse" in f:
            coarse = {name: f["coarse"][name][()] for name in f["coarse"]}
    return fields, attrs, coarse


def read_group(path, name: str) -> dict | None:
    """Fetch one named channel group (e.g. ``refined``) from a container."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    with h5py.File(path, "r") as f:
        if name not in f:
            return None
        return {ch: f[name][ch][()] for ch in f[name]}


def save_trajectory(path, seq: FieldSequence) -> None:
    attrs = {
        "dataset_name": seq.spec.name,
        "frame_interval": float(seq.spec.frame_interval),
        "boundary": seq.spec.boundary.value,
    }
    if seq.metadata:
        attrs["metadata_json"] = json.dumps(seq.metadata, sort_keys=True, default=float)
    fields = {ch: seq.data[:, i] for i, ch in enumerate(seq.spec.channels)}
    write_container(path, fields, attrs)


def load_well_trajectory(path, spec: DatasetSpec) -> FieldSequence:
    """Load one trajectory file and validate it against ``spec``.

    Channel order follows the spec, not file iteration order. Missing
    channels, shape disagreements, and non-finite values raise distinct
    errors.
    """
    fields, attrs, _ = read_container(path)
    missing = [ch for ch in spec.channels if ch not in fields]
    if missing:
        raise MissingChannelError(f"{path}: channels {missing} absent (found {sorted(fields)})")
    arrays = []
    T = None
    for ch in spec.channels:
        arr = fields[ch]
        if arr.ndim != 3:
            raise ShapeMismatchError(f"{path}:/fields/{ch} must be (T, H, W), got {arr.shape}")
        if T is None:
            T = arr.shape[0]
        if arr.shape != (T, spec.height, spec.width):
            raise ShapeMismatchError(
                f"{path}:/fields/{ch} shape {arr.shape} disagrees with "
                f"({T}, {spec.height}, {spec.width})"
            )
        arrays.append(arr)
    data = np.stack(arrays, axis=1)
    if not np.isfinite(data).all():
        raise NonFiniteDataError(f"{path}: non-finite values in trajectory")
    meta = {}
    if "metadata_json" in attrs:
        meta = json.loads(attrs["metadata_json"])
    return FieldSequence(data=data, spec=spec, metadata=meta)


def crop_compatible(data: np.ndarray) -> np.ndarray:
    """Crop (T, H, W) or (T, C, H, W) so the compression laws divide evenly.

    Cropping keeps the leading frames and the top-left spatial corner;
    nothing is ever padded.
    """
    T = data.shape[0]
    H, W = data.shape[-2], data.shape[-1]
    t = (T // TEMPORAL_FACTOR) * TEMPORAL_FACTOR
    h = (H // SPATIAL_FACTOR) * SPATIAL_FACTOR
    w = (W // SPATIAL_FACTOR) * SPATIAL_FACTOR
    if min(t, h, w) == 0:
        raise ShapeMismatchError(
            f"array of shape {data.shape} too small to crop to the {TEMPORAL_FACTOR}x"
            f"{SPATIAL_FACTOR}x{SPATIAL_FACTOR} grid"
        )
    return data[:t, ..., :h, :w]


def convert_well_native(src, out_dir, dataset_name: str | None = None) -> list[Path]:
    """Adapt one Well-native HDF5 file to the per-trajectory layout.

    Expects ``t0_fields/<name>`` arrays of shape (N, T, H, W) or (T, H, W)
    and optional ``t1_fields/<name>`` with a trailing component axis, which
    is split into ``<name>_x`` / ``<name>_y`` channels. Arrays are cropped
    (never padded) to the compression grid. Returns the written paths.
    """
    src = Path(src)
    out_dir = Path(out_dir)
    if not src.exists():
        raise DataError(f"source file not found: {src}")
    with h5py.File(src, "r") as f:
        name = dataset_name or str(f.attrs.get("dataset_name", src.stem))
        raw: dict[str, np.ndarray] = {}
        if "t0_fields" in f:
            for key in f["t0_fields"]:
                raw[key] = f["t0_fields"][key][()]
        if "t1_fields" in f:
            for key in f["t1_fields"]:
                arr = f["t1_fields"][key][()]
                if arr.shape[-1] != 2:
                    raise ShapeMismatchError(
                        f"{src}:/t1_fields/{key}: expected a trailing 2-component axis, got {arr.shape}"
                    )
                raw[f"{key}_x"] = arr[..., 0]
                raw[f"{key}_y"] = arr[..., 1]
        if not raw:
            raise DataError(f"{src}: no t0_fields/t1_fields groups to convert")

    ndims = {a.ndim for a in raw.values()}
    if ndims == {3}:
        stacked = {k: v[None] for k, v in raw.items()}
    elif ndims == {4}:
        stacked = raw
    else:
        raise ShapeMismatchError(f"{src}: inconsistent array ranks {sorted(ndims)}")

    n_traj = next(iter(stacked.values())).shape[0]
    channels = sorted(stacked)
    out_paths = []
    spec = None
    for i in range(n_traj):
        fields = {ch: crop_compatible(stacked[ch][i].astype(np.float32)) for ch in channels}
        T, H, W = next(iter(fields.values())).shape
        if spec is None:
            spec = DatasetSpec(name=name, channels=tuple(channels), height=H, width=W)
        data = np.stack([fields[ch] for ch in spec.channels], axis=1)
        seq = FieldSequence(data=data, spec=spec, metadata={"source": src.name, "index": i})
        out = out_dir / f"{name}_{i:04d}.h5"
        save_trajectory(out, seq)
        out_paths.append(out)
    return out_paths


@dataclass
class DataManifest:
    """Run-level index: dataset specs, split file lists, channel union.

    ``splits[dataset][split]`` holds trajectory paths relative to the
    manifest's directory, so the whole data tree is relocatable.
    """

    datasets: dict[str, DatasetSpec]
    splits: dict[str, dict[str, list[str]]]
    union: ChannelUnion
    normalization: str = "per_dataset"
    root: Path = field(default=Path("."), compare=False)

    def split_paths(self, dataset: str, split: str) -> list[Path]:
        try:
            rels = self.splits[dataset][split]
        except KeyError:
            raise DataError(f"manifest has no {split!r} split for dataset {dataset!r}") from None
        return [self.root / r for r in rels]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "normalization": self.normalization,
            "channel_union": [{"name": c.name, "kind": c.kind} for c in self.union.channels],
            "datasets": [
                {
                    "name": s.name,
                    "channels": list(s.channels),
                    "height": s.height,
                    "width": s.width,
                    "counts": dict(s.counts),
                    "frame_interval": s.frame_interval,
                    "boundary": s.boundary.value,
                    "splits": {k: list(v) for k, v in self.splits.get(s.name, {}).items()},
                }
                for s in self.datasets.values()
            ],
        }


def save_manifest(path, manifest: DataManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> DataManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {path} is not valid JSON: {e}") from e
    try:
        union = ChannelUnion(
            tuple(Channel(c["name"], c.get("kind", "scalar")) for c in doc["channel_union"])
        )
        datasets = {}
        splits = {}
        for d in doc["datasets"]:
            spec = DatasetSpec(
                name=d["name"],
                channels=tuple(d["channels"]),
                height=int(d["height"]),
                width=int(d["width"]),
                counts={k: int(v) for k, v in d.get("counts", {}).items()},
                frame_interval=float(d.get("frame_interval", 1.0)),
                boundary=Boundary(d.get("boundary", "periodic")),
            )
            datasets[spec.name] = spec
            splits[spec.name] = {k: list(v) for k, v in d.get("splits", {}).items()}
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"manifest {path} is malformed: {e}") from e
    return DataManifest(
        datasets=datasets,
        splits=splits,
        union=union,
        normalization=doc.get("normalization", "per_dataset"),
        root=path.parent,
    )

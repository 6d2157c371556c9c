"""Core data model for multi-channel spatiotemporal field trajectories."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    ConfigError,
    NonFiniteDataError,
    NormalizationStateError,
    ShapeMismatchError,
)

SPATIAL_FACTOR = 8
TEMPORAL_FACTOR = 4


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    WALL = "wall"
    OPEN = "open"


@dataclass(frozen=True)
class Channel:
    """A globally unique physical channel: string id plus a meaning tag."""

    name: str
    kind: str = "scalar"


@dataclass(frozen=True)
class ChannelUnion:
    """Fixed ordered set of all channels across every dataset in a run.

    The union is established at pipeline-construction time; positions are
    stable, so extending the union (finetune) only appends.
    """

    channels: tuple[Channel, ...]

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate channel ids in union: {names}")

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    @property
    def index(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.channels)}

    def positions(self, names) -> list[int]:
        idx = self.index
        missing = [n for n in names if n not in idx]
        if missing:
            raise ConfigError(f"channels {missing} are not in the union {self.names}")
        return [idx[n] for n in names]

    def extended(self, new_channels) -> "ChannelUnion":
        """Union with ``new_channels`` appended; existing positions unchanged."""
        extra = tuple(c for c in new_channels if c.name not in self.index)
        return ChannelUnion(self.channels + extra)


@dataclass(frozen=True)
class DatasetSpec:
    """Static description of one dataset: channels, resolution, splits."""

    name: str
    channels: tuple[str, ...]
    height: int
    width: int
    counts: dict[str, int] = field(default_factory=dict)
    frame_interval: float = 1.0
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        if self.height % SPATIAL_FACTOR or self.width % SPATIAL_FACTOR:
            raise ConfigError(
                f"{self.name}: height/width must be divisible by {SPATIAL_FACTOR}, "
                f"got {self.height}x{self.width}"
            )
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError(f"{self.name}: duplicate channel names")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def num_channels(self) -> int:
        return len(self.channels)


@dataclass
class FieldSequence:
    """A trajectory of C-channel fields on an H x W grid over T frames.

    ``data`` has shape (T, C, H, W), float32, channel order matching
    ``spec.channels``. ``norm_state`` tracks whether per-channel z-scoring
    has been applied.
    """

    data: np.ndarray
    spec: DatasetSpec
    norm_state: str = "raw"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ShapeMismatchError(f"expected (T, C, H, W) data, got shape {self.data.shape}")
        t, c, h, w = self.data.shape
        if t < 1:
            raise ShapeMismatchError("trajectory must contain at least one frame")
        if (c, h, w) != (self.spec.num_channels, self.spec.height, self.spec.width):
            raise ShapeMismatchError(
                f"data shape {self.data.shape} disagrees with spec "
                f"({self.spec.num_channels}, {self.spec.height}, {self.spec.width})"
            )
        if not np.isfinite(self.data).all():
            raise NonFiniteDataError(f"{self.spec.name}: trajectory contains non-finite values")
        if self.norm_state not in ("raw", "normalized"):
            raise NormalizationStateError(f"unknown norm_state {self.norm_state!r}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def presence_mask(self, union: ChannelUnion) -> np.ndarray:
        """Boolean vector over the union marking this dataset's channels."""
        mask = np.zeros(len(union), dtype=bool)
        mask[union.positions(self.spec.channels)] = True
        return mask

    def window(self, start: int, length: int) -> "FieldSequence":
        if start < 0 or start + length > self.num_frames:
            raise ShapeMismatchError(
                f"window [{start}, {start + length}) outside trajectory of {self.num_frames} frames"
            )
        return FieldSequence(
            data=self.data[start : start + length],
            spec=self.spec,
            norm_state=self.norm_state,
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics fit on the training split."""

    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.epsilon <= 0:
            raise ConfigError("epsilon floor must be positive")
        if self.mean.shape != (len(self.channels),) or self.std.shape != (len(self.channels),):
            raise ShapeMismatchError("stats shape must match channel count")
        if np.any(self.std < self.epsilon):
            raise ConfigError("std entries below the epsilon floor")

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            channels=tuple(d["channels"]),
            mean=np.asarray(d["mean"]),
            std=np.asarray(d["std"]),
            epsilon=float(d["epsilon"]),
        )

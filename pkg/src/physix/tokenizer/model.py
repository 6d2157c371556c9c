"""Universal tokenizer: channel-union embedding, causal encoder, FSQ, decoders.

Temporal handling is block-local: every block of 4 consecutive pixel
frames is stacked channel-major into a single 2D problem and mapped to
one latent frame. Latent frame i therefore depends on pixel frames
4i..4i+3 only, which satisfies causality by construction and makes
prefix encoding bit-identical to full-sequence encoding (the canonical
paths below process one block at a fixed shape at a time; CPU kernels
are only bit-stable at fixed shapes).
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, NormalizationStateError, ShapeMismatchError
from ..fields.types import SPATIAL_FACTOR, TEMPORAL_FACTOR, ChannelUnion, FieldSequence
from .fsq import ScalarQuantizer, pack_index, unpack_index


@dataclass
class TokenizerConfig:
    union: tuple
    datasets: dict
    fsq_levels: tuple = (8, 8, 8, 5, 5, 5)
    width: int = 64
    depth: int = 2
    attn_heads: int = 4
    pad_shape: tuple = (1, 1)
    spatial_factor: int = SPATIAL_FACTOR
    temporal_factor: int = TEMPORAL_FACTOR

    def __post_init__(self):
        self.union = tuple(tuple(c) if not isinstance(c, str) else (c, "scalar") for c in self.union)
        self.fsq_levels = tuple(int(v) for v in self.fsq_levels)
        self.pad_shape = tuple(int(v) for v in self.pad_shape)
        if self.spatial_factor != SPATIAL_FACTOR or self.temporal_factor != TEMPORAL_FACTOR:
            raise ConfigError(
                f"compression factors are fixed at {SPATIAL_FACTOR}x spatial / "
                f"{TEMPORAL_FACTOR}x temporal"
            )
        if any(v < 2 for v in self.fsq_levels):
            raise ConfigError(f"fsq levels must all be >= 2, got {self.fsq_levels}")
        if self.attn_heads and self.width % self.attn_heads:
            raise ConfigError("attn_heads must divide width")
        names = self.union_names
        for ds, entry in self.datasets.items():
            unknown = [c for c in entry["channels"] if c not in names]
            if unknown:
                raise ConfigError(f"dataset {ds}: channels {unknown} not in the union")
            if entry["height"] % SPATIAL_FACTOR or entry["width"] % SPATIAL_FACTOR:
                raise ConfigError(f"dataset {ds}: resolution must be divisible by {SPATIAL_FACTOR}")

    @property
    def union_names(self) -> tuple:
        return tuple(name for name, _ in self.union)

    @property
    def latent_dim(self) -> int:
        return len(self.fsq_levels)

    @property
    def codebook_size(self) -> int:
        import math

        return math.prod(self.fsq_levels)

    def to_dict(self) -> dict:
        return {
            "union": [list(c) for c in self.union],
            "datasets": {
                k: {"channels": list(v["channels"]), "height": v["height"], "width": v["width"]}
                for k, v in self.datasets.items()
            },
            "fsq_levels": list(self.fsq_levels),
            "width": self.width,
            "depth": self.depth,
            "attn_heads": self.attn_heads,
            "pad_shape": list(self.pad_shape),
            "spatial_factor": self.spatial_factor,
            "temporal_factor": self.temporal_factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizerConfig":
        return cls(
            union=tuple(tuple(c) for c in d["union"]),
            datasets={
                k: {"channels": tuple(v["channels"]), "height": int(v["height"]), "width": int(v["width"])}
                for k, v in d["datasets"].items()
            },
            fsq_levels=tuple(d["fsq_levels"]),
            width=int(d["width"]),
            depth=int(d["depth"]),
            attn_heads=int(d["attn_heads"]),
            pad_shape=tuple(d["pad_shape"]),
        )


@dataclass
class TokenGrid:
    """Integer tokens of shape (M/4, H/8, W/8) for one trajectory window."""

    tokens: torch.Tensor
    dataset: str
    context_frames: int

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise ShapeMismatchError(f"tokens must be (latent_frames, h, w), got {tuple(self.tokens.shape)}")
        if self.tokens.dtype != torch.long:
            self.tokens = self.tokens.long()
        if self.context_frames != self.tokens.shape[0] * TEMPORAL_FACTOR:
            raise ShapeMismatchError(
                f"{self.context_frames} pixel frames inconsistent with "
                f"{self.tokens.shape[0]} latent frames"
            )

    @property
    def latent_frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.tokens.shape[1] * self.tokens.shape[2]


class ResBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class SpatialAttention(nn.Module):
    """Single self-attention layer over the spatial token grid of one block."""

    def __init__(self, width, heads):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)

    def forward(self, x):
        b, c, h, w = x.shape
        seq = x.flatten(2).transpose(1, 2)
        normed = self.norm(seq)
        out, _ = self.attn(normed, normed, normed, need_weights=False)
        seq = seq + out
        return seq.transpose(1, 2).reshape(b, c, h, w)


class EncoderCore(nn.Module):
    """(B, 4*U, H, W) -> (B, d, H/8, W/8); one 4-frame block per item."""

    def __init__(self, in_channels, width, depth, attn_heads, latent_dim):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, width, 3, padding=1)
        downs = []
        for _ in range(3):
            downs += [nn.GroupNorm(8, width), nn.SiLU(), nn.Conv2d(width, width, 3, stride=2, padding=1)]
        self.down = nn.Sequential(*downs)
        self.blocks = nn.Sequential(*[ResBlock(width) for _ in range(depth)])
        self.attn = SpatialAttention(width, attn_heads) if attn_heads else nn.Identity()
        self.head = nn.Conv2d(width, latent_dim, 1)

    def forward(self, x):
        x = self.stem(x)
        x = self.down(x)
        x = self.blocks(x)
        x = self.attn(x)
        return self.head(x)


class DecoderCore(nn.Module):
    """(B, d, H/8, W/8) -> (B, 4*C, H, W) for one dataset."""

    def __init__(self, latent_dim, width, depth, out_channels):
        super().__init__()
        self.stem = nn.Conv2d(latent_dim, width, 3, padding=1)
        self.blocks = nn.Sequential(*[ResBlock(width) for _ in range(depth)])
        ups = []
        for _ in range(3):
            ups += [nn.GroupNorm(8, width), nn.SiLU(), nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(width, width, 3, padding=1)]
        self.up = nn.Sequential(*ups)
        self.head = nn.Conv2d(width, out_channels, 3, padding=1)

    def forward(self, z):
        z = self.stem(z)
        z = self.blocks(z)
        z = self.up(z)
        return self.head(z)


class UniversalTokenizer(nn.Module):
    """Shared encoder over the channel union plus strictly dataset-keyed decoders."""

    def __init__(self, config: TokenizerConfig):
        super().__init__()
        self.config = config
        self.quantizer = ScalarQuantizer(config.fsq_levels)
        self.pads = nn.ParameterDict(
            {name: nn.Parameter(torch.zeros(config.pad_shape)) for name in config.union_names}
        )
        u = len(config.union_names)
        self.encoder = EncoderCore(
            in_channels=u * TEMPORAL_FACTOR,
            width=config.width,
            depth=config.depth,
            attn_heads=config.attn_heads,
            latent_dim=config.latent_dim,
        )
        self.decoders = nn.ModuleDict(
            {
                name: DecoderCore(
                    latent_dim=config.latent_dim,
                    width=config.width,
                    depth=config.depth,
                    out_channels=len(entry["channels"]) * TEMPORAL_FACTOR,
                )
                for name, entry in config.datasets.items()
            }
        )

    # ----- channel union embedding -----

    def _pad_image(self, name, H, W, dtype):
        pad = self.pads[name]
        if pad.shape == (1, 1):
            return pad.expand(H, W)
        if pad.shape != (H, W):
            return F.interpolate(
                pad[None, None], size=(H, W), mode="bilinear", align_corners=False
            )[0, 0]
        return pad

    def embed_channels(self, data: torch.Tensor, channels) -> torch.Tensor:
        """Scatter (M, C, H, W) into union order (M, U, H, W), padding absences."""
        names = self.config.union_names
        idx = {n: i for i, n in enumerate(names)}
        missing = [c for c in channels if c not in idx]
        if missing:
            raise ConfigError(f"channels {missing} not in union {names}")
        if len(set(channels)) != len(channels):
            raise ConfigError(f"duplicate channels {channels}")
        M, C, H, W = data.shape
        if C != len(channels):
            raise ShapeMismatchError(f"data has {C} channels but {len(channels)} names given")
        out = torch.empty(M, len(names), H, W, dtype=data.dtype, device=data.device)
        present = set(channels)
        for u, name in enumerate(names):
            if name in present:
                out[:, u] = data[:, channels.index(name)]
            else:
                out[:, u] = self._pad_image(name, H, W, data.dtype)
        return out

    def embed_sequence(self, seq: FieldSequence) -> torch.Tensor:
        if seq.norm_state != "normalized":
            raise NormalizationStateError("tokenizer consumes normalized sequences")
        data = torch.from_numpy(seq.data)
        return self.embed_channels(data, list(seq.spec.channels))

    # ----- encode / decode -----

    @staticmethod
    def _stack_blocks(dense: torch.Tensor) -> torch.Tensor:
        """(M, U, H, W) -> (M/4, U*4, H, W), channel-major frame stacking."""
        M, U, H, W = dense.shape
        if M % TEMPORAL_FACTOR:
            raise ShapeMismatchError(f"frame count {M} not divisible by {TEMPORAL_FACTOR}")
        blocks = dense.reshape(M // TEMPORAL_FACTOR, TEMPORAL_FACTOR, U, H, W)
        return blocks.transpose(1, 2).reshape(M // TEMPORAL_FACTOR, U * TEMPORAL_FACTOR, H, W)

    @staticmethod
    def _unstack_blocks(out: torch.Tensor, C: int) -> torch.Tensor:
        """(M/4, C*4, H, W) -> (M, C, H, W)."""
        n, _, H, W = out.shape
        frames = out.reshape(n, C, TEMPORAL_FACTOR, H, W).transpose(1, 2)
        return frames.reshape(n * TEMPORAL_FACTOR, C, H, W)

    def encode_dense(self, dense: torch.Tensor) -> torch.Tensor:
        """Canonical path: one block at a time, fixed shapes, bit-stable."""
        blocks = self._stack_blocks(dense)
        outs = [self.encoder(blocks[i : i + 1]) for i in range(blocks.shape[0])]
        return torch.cat(outs, dim=0)

    def encode_dense_batched(self, dense: torch.Tensor) -> torch.Tensor:
        """Training path: all blocks in one batch (fast, not bit-stable)."""
        return self.encoder(self._stack_blocks(dense))

    def encode(self, seq: FieldSequence) -> torch.Tensor:
        """FieldSequence -> continuous latents (M/4, d, H/8, W/8)."""
        return self.encode_dense(self.embed_sequence(seq))

    def tokenize(self, seq: FieldSequence) -> TokenGrid:
        latents = self.encode(seq)
        codes, _ = self.quantizer.quantize(latents.permute(0, 2, 3, 1))
        tokens = pack_index(codes, self.config.fsq_levels)
        return TokenGrid(tokens=tokens, dataset=seq.spec.name, context_frames=seq.num_frames)

    def decode_latents(self, quantized: torch.Tensor, dataset: str, batched: bool = False) -> torch.Tensor:
        """Quantized latents (M/4, d, h, w) -> normalized pixels (M, C, H, W)."""
        if dataset not in self.decoders:
            raise ConfigError(f"no decoder for dataset {dataset!r}")
        decoder = self.decoders[dataset]
        C = len(self.config.datasets[dataset]["channels"])
        if batched:
            out = decoder(quantized)
        else:
            out = torch.cat([decoder(quantized[i : i + 1]) for i in range(quantized.shape[0])], dim=0)
        return self._unstack_blocks(out, C)

    def decode(self, grid: TokenGrid) -> torch.Tensor:
        if int(grid.tokens.min()) < 0 or int(grid.tokens.max()) >= self.config.codebook_size:
            raise ConfigError("token ids outside the codebook")
        codes = unpack_index(grid.tokens, self.config.fsq_levels)
        quantized = codes.float().permute(0, 3, 1, 2)
        return self.decode_latents(quantized, grid.dataset)

    def reconstruct(self, dense: torch.Tensor, dataset: str) -> torch.Tensor:
        """Differentiable round trip used by training (batched, with STE)."""
        latents = self.encode_dense_batched(dense)
        _, quantized = self.quantizer.quantize(latents.permute(0, 2, 3, 1))
        return self.decode_latents(quantized.permute(0, 3, 1, 2), dataset, batched=True)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def extend_tokenizer(model: UniversalTokenizer, new_datasets: dict, new_union=()) -> UniversalTokenizer:
    """Grow the union and dataset registry, keeping all trained weights.

    ``new_union`` lists (name, kind) pairs to append; names already in
    the union are ignored. Because the stacked encoder input is ordered
    union-position-major, existing stem columns stay a contiguous prefix
    and the old encoder behaves identically on old datasets. New pads
    start at zero and new decoders start fresh.
    """
    old = model.config
    known = set(old.union_names)
    extra = tuple((n, k) for n, k in new_union if n not in known)
    datasets = {name: {"channels": tuple(v["channels"]), "height": v["height"], "width": v["width"]}
                for name, v in old.datasets.items()}
    for name, entry in new_datasets.items():
        if name in datasets:
            raise ConfigError(f"dataset {name!r} already registered")
        datasets[name] = {
            "channels": tuple(entry["channels"]),
            "height": int(entry["height"]),
            "width": int(entry["width"]),
        }
    available = known | {n for n, _ in extra}
    for name, entry in datasets.items():
        missing = [c for c in entry["channels"] if c not in available]
        if missing:
            raise ConfigError(f"dataset {name!r} channels {missing} not covered by the union")
    cfg = TokenizerConfig(
        union=tuple(old.union) + extra,
        datasets=datasets,
        fsq_levels=old.fsq_levels,
        width=old.width,
        depth=old.depth,
        attn_heads=old.attn_heads,
        pad_shape=old.pad_shape,
    )
    extended = UniversalTokenizer(cfg)
    with torch.no_grad():
        new_state = extended.state_dict()
        for key, value in model.state_dict().items():
            if key == "encoder.stem.weight":
                new_state[key][:, : value.shape[1]].copy_(value)
            else:
                new_state[key].copy_(value)
        extended.load_state_dict(new_state)
    return extended

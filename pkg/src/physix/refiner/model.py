"""Pixel-space refinement: ConvNeXt-style U-Net predicting a residual.

One refiner instance per dataset. Input is the channel concatenation of
k ground-truth context frames and one coarse (decoded AR) frame; output
is coarse + residual, so a zero-initialized head makes refinement the
exact identity.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, ShapeMismatchError


@dataclass
class RefinerConfig:
    datasets: dict
    context_frames: int = 8
    width: int = 32
    blocks_per_stage: int = 1
    stages: int = 2
    precision: str = "float32"

    def __post_init__(self):
        if self.precision != "float32":
            raise ConfigError(
                "refiner arithmetic must stay in float32; lower precision degrades "
                "low-variance datasets"
            )
        if self.context_frames < 1 or self.context_frames % 4:
            raise ConfigError("context_frames must be a positive multiple of 4")
        if self.stages < 1:
            raise ConfigError("need at least one U-Net stage")

    def in_channels(self, dataset: str) -> int:
        C = len(self.datasets[dataset]["channels"])
        return (self.context_frames + 1) * C

    def to_dict(self) -> dict:
        return {
            "datasets": {k: {"channels": list(v["channels"])} for k, v in self.datasets.items()},
            "context_frames": self.context_frames,
            "width": self.width,
            "blocks_per_stage": self.blocks_per_stage,
            "stages": self.stages,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerConfig":
        return cls(
            datasets={k: {"channels": tuple(v["channels"])} for k, v in d["datasets"].items()},
            context_frames=int(d["context_frames"]),
            width=int(d["width"]),
            blocks_per_stage=int(d["blocks_per_stage"]),
            stages=int(d["stages"]),
            precision=d.get("precision", "float32"),
        )


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, 7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.pwconv1 = nn.Linear(dim, 4 * dim)
        self.pwconv2 = nn.Linear(4 * dim, dim)
        self.gamma = nn.Parameter(1e-6 * torch.ones(dim))

    def forward(self, x):
        h = self.dwconv(x)
        h = h.permute(0, 2, 3, 1)
        h = self.norm(h)
        h = self.pwconv2(F.gelu(self.pwconv1(h)))
        h = (self.gamma * h).permute(0, 3, 1, 2)
        return x + h


def _stage(dim, n_blocks):
    return nn.Sequential(*[ConvNeXtBlock(dim) for _ in range(n_blocks)])


class RefinerNet(nn.Module):
    """U-Net over the stacked (context, coarse) channels for one dataset."""

    def __init__(self, cfg: RefinerConfig, dataset: str):
        super().__init__()
        self.dataset = dataset
        self.out_channels = len(cfg.datasets[dataset]["channels"])
        w = cfg.width
        self.stem = nn.Conv2d(cfg.in_channels(dataset), w, 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        dims = [w * (2**i) for i in range(cfg.stages + 1)]
        for i in range(cfg.stages):
            self.enc.append(_stage(dims[i], cfg.blocks_per_stage))
            self.down.append(nn.Conv2d(dims[i], dims[i + 1], 2, stride=2))
        self.mid = _stage(dims[-1], cfg.blocks_per_stage)
        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(cfg.stages)):
            self.up.append(nn.ConvTranspose2d(dims[i + 1], dims[i], 2, stride=2))
            self.fuse.append(nn.Conv2d(2 * dims[i], dims[i], 1))
            self.dec.append(_stage(dims[i], cfg.blocks_per_stage))
        self.head = nn.Conv2d(w, self.out_channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, context: torch.Tensor, coarse: torch.Tensor) -> torch.Tensor:
        """context (B, k, C, H, W), coarse (B, C, H, W) -> refined (B, C, H, W)."""
        if context.ndim != 5 or coarse.ndim != 4:
            raise ShapeMismatchError("expected context (B,k,C,H,W) and coarse (B,C,H,W)")
        B, k, C, H, W = context.shape
        if coarse.shape != (B, C, H, W):
            raise ShapeMismatchError(
                f"coarse shape {tuple(coarse.shape)} incompatible with context {tuple(context.shape)}"
            )
        scale = 2 ** len(self.enc)
        if H % scale or W % scale:
            raise ShapeMismatchError(f"{H}x{W} not divisible by the U-Net factor {scale}")
        x = torch.cat([context.reshape(B, k * C, H, W), coarse], dim=1)
        x = self.stem(x)
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc(x)
            skips.append(x)
            x = down(x)
        x = self.mid(x)
        for up, fuse, dec in zip(self.up, self.fuse, self.dec):
            x = up(x)
            x = fuse(torch.cat([x, skips.pop()], dim=1))
            x = dec(x)
        return coarse + self.head(x)


class RefinerBank(nn.Module):
    """Registry of independent per-dataset refiners."""

    def __init__(self, config: RefinerConfig):
        super().__init__()
        self.config = config
        self.nets = nn.ModuleDict({name: RefinerNet(config, name) for name in config.datasets})

    def refine(self, dataset: str, context: torch.Tensor, coarse: torch.Tensor) -> torch.Tensor:
        if dataset not in self.nets:
            raise ConfigError(f"no refiner trained for dataset {dataset!r}")
        return self.nets[dataset](context, coarse)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

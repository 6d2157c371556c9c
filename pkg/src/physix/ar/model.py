"""Decoder-only transformer over flattened token grids.

Two inference paths:
  * ``forward``: whole-sequence causal attention, used for training. Bit
    stability across different sequence lengths is NOT guaranteed by CPU
    attention kernels.
  * stepwise (``init_state`` / ``step``): one token at a time with a KV
    cache. Every step has a fixed shape given its index, so the logits
    after a prefix are bit-identical no matter what follows — this is the
    canonical path for causality checks and rollout.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, ShapeMismatchError
from ..tokenizer.model import TokenGrid
from .rope import axis_split, raster_positions, rope3d_apply


@dataclass
class ARConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    width: int = 192
    ff_width: int = 768
    max_context: int = 4096
    rope_base: float = 10000.0
    sampling: str = "greedy"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab size must be at least 2")
        if self.width % self.heads:
            raise ConfigError("head count must divide width")
        if self.width % 6:
            raise ConfigError("width must be divisible by 6 for the three rotary axes")
        axis_split(self.head_dim)
        if self.sampling not in ("greedy", "top_k", "temperature"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "layers": self.layers,
            "heads": self.heads,
            "width": self.width,
            "ff_width": self.ff_width,
            "max_context": self.max_context,
            "rope_base": self.rope_base,
            "sampling": self.sampling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ARConfig":
        return cls(
            vocab_size=int(d["vocab_size"]),
            layers=int(d["layers"]),
            heads=int(d["heads"]),
            width=int(d["width"]),
            ff_width=int(d["ff_width"]),
            max_context=int(d["max_context"]),
            rope_base=float(d["rope_base"]),
            sampling=d.get("sampling", "greedy"),
        )


@dataclass
class TokenSequence:
    """Raster-flattened token grid: ids plus (t, h, w) triples per token."""

    tokens: torch.Tensor
    positions: torch.Tensor
    grid_dims: tuple
    dataset: str = ""

    def __post_init__(self):
        self.tokens = self.tokens.long().reshape(-1)
        self.positions = self.positions.long()
        self.grid_dims = tuple(int(v) for v in self.grid_dims)
        m, h, w = self.grid_dims
        if self.tokens.shape[0] != m * h * w:
            raise ShapeMismatchError(
                f"{self.tokens.shape[0]} tokens but grid {self.grid_dims} implies {m * h * w}"
            )
        if self.positions.shape != (m * h * w, 3):
            raise ShapeMismatchError(f"positions shape {tuple(self.positions.shape)} != ({m * h * w}, 3)")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_dims[1] * self.grid_dims[2]

    @classmethod
    def from_grid(cls, grid: TokenGrid) -> "TokenSequence":
        m, h, w = grid.tokens.shape
        return cls(
            tokens=grid.tokens.reshape(-1),
            positions=raster_positions(m, h, w),
            grid_dims=(m, h, w),
            dataset=grid.dataset,
        )

    def to_grid(self) -> TokenGrid:
        m, h, w = self.grid_dims
        return TokenGrid(
            tokens=self.tokens.reshape(m, h, w),
            dataset=self.dataset,
            context_frames=4 * m,
        )

    def frame_slice(self, start: int, count: int) -> "TokenSequence":
        """Sub-sequence covering latent frames [start, start+count)."""
        m, h, w = self.grid_dims
        if start < 0 or start + count > m:
            raise ShapeMismatchError(f"frames [{start}, {start + count}) outside grid of {m}")
        L = h * w
        sl = slice(start * L, (start + count) * L)
        pos = self.positions[sl].clone()
        pos[:, 0] -= start
        return TokenSequence(
            tokens=self.tokens[sl], positions=pos, grid_dims=(count, h, w), dataset=self.dataset
        )


class Block(nn.Module):
    def __init__(self, cfg: ARConfig):
        super().__init__()
        self.cfg = cfg
        self.ln1 = nn.LayerNorm(cfg.width)
        self.qkv = nn.Linear(cfg.width, 3 * cfg.width)
        self.proj = nn.Linear(cfg.width, cfg.width)
        self.ln2 = nn.LayerNorm(cfg.width)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.width, cfg.ff_width), nn.GELU(), nn.Linear(cfg.ff_width, cfg.width)
        )

    def _qkv(self, x, positions):
        B, S, _ = x.shape
        H, D = self.cfg.heads, self.cfg.head_dim
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(B, S, H, D).transpose(1, 2)
        k = k.view(B, S, H, D).transpose(1, 2)
        v = v.view(B, S, H, D).transpose(1, 2)
        pos = positions[:, None, :, :]
        q = rope3d_apply(q, pos, self.cfg.rope_base)
        k = rope3d_apply(k, pos, self.cfg.rope_base)
        return q, k, v

    def forward(self, x, positions):
        B, S, _ = x.shape
        q, k, v = self._qkv(x, positions)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(B, S, self.cfg.width)
        x = x + self.proj(out)
        return x + self.mlp(self.ln2(x))

    def step(self, x, position, cache):
        """x: (1, 1, width); cache: dict with growing k/v tensors."""
        q, k, v = self._qkv(x, position[None, None, :])
        if cache["k"] is not None:
            k = torch.cat([cache["k"], k], dim=2)
            v = torch.cat([cache["v"], v], dim=2)
        cache["k"], cache["v"] = k, v
        scores = (q * (1.0 / math.sqrt(self.cfg.head_dim))) @ k.transpose(-2, -1)
        attn = torch.softmax(scores, dim=-1)
        out = attn @ v
        out = out.transpose(1, 2).reshape(1, 1, self.cfg.width)
        x = x + self.proj(out)
        return x + self.mlp(self.ln2(x))


class ARTransformer(nn.Module):
    def __init__(self, config: ARConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.width)
        self.blocks = nn.ModuleList([Block(config) for _ in range(config.layers)])
        self.ln_f = nn.LayerNorm(config.width)
        self.head = nn.Linear(config.width, config.vocab_size)
        # uniform logits at initialization: untrained loss is exactly ln(V)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, tokens: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """Batched causal logits: (B, S) + (B, S, 3) -> (B, S, vocab)."""
        if tokens.ndim != 2:
            raise ShapeMismatchError(f"tokens must be (batch, seq), got {tuple(tokens.shape)}")
        if tokens.shape[1] > self.config.max_context:
            raise ConfigError(
                f"sequence of {tokens.shape[1]} tokens exceeds max context {self.config.max_context}"
            )
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x, positions)
        return self.head(self.ln_f(x))

    # ----- stepwise path -----

    def init_state(self) -> dict:
        return {"caches": [{"k": None, "v": None} for _ in self.blocks], "length": 0}

    def step(self, state: dict, token: int, position) -> torch.Tensor:
        """Feed one token; returns logits (vocab,) for the next position."""
        if state["length"] + 1 > self.config.max_context:
            raise ConfigError(f"stepwise context exceeds max {self.config.max_context}")
        position = torch.as_tensor(position, dtype=torch.long)
        x = self.embed(torch.tensor([[int(token)]]))
        for block, cache in zip(self.blocks, state["caches"]):
            x = block.step(x, position, cache)
        state["length"] += 1
        return self.head(self.ln_f(x))[0, 0]


def next_token_logits(seq: TokenSequence, model: ARTransformer) -> torch.Tensor:
    """Canonical per-position logits (S, vocab) via the stepwise path."""
    if len(seq) > model.config.max_context:
        raise ConfigError(f"sequence of {len(seq)} tokens exceeds max context")
    state = model.init_state()
    rows = []
    with torch.no_grad():
        for i in range(len(seq)):
            rows.append(model.step(state, int(seq.tokens[i]), seq.positions[i]))
    return torch.stack(rows)


def ar_loss(
    logits: torch.Tensor,
    tokens: torch.Tensor,
    tokens_per_frame: int,
    mask_context: bool = True,
) -> torch.Tensor:
    """Mean next-token NLL over predicted positions.

    ``logits`` (B, S, V) predict ``tokens`` shifted by one. With
    ``mask_context`` on, positions whose targets lie inside the first
    latent frame are excluded: the first frame is pure context in every
    window, matching the conditioning at rollout time.
    """
    if tokens.shape[1] < 2:
        raise ShapeMismatchError("ar loss needs at least 2 tokens")
    pred = logits[:, :-1]
    targets = tokens[:, 1:]
    nll = F.cross_entropy(pred.reshape(-1, pred.shape[-1]), targets.reshape(-1), reduction="none")
    nll = nll.view(targets.shape)
    if mask_context:
        target_index = torch.arange(1, tokens.shape[1], device=tokens.device)
        keep = target_index >= tokens_per_frame
        if not keep.any():
            raise ShapeMismatchError("window has no positions beyond the context frame")
        nll = nll[:, keep]
    return nll.mean()

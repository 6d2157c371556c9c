"""Rotary position embedding over (time, height, width) token positions.

The per-head feature dimension is split into three contiguous axis
blocks: equal thirds, with any remainder assigned to the time axis.
Each block is rotated by angles position * base^(-2i/d_axis). Because
the angle is a plain product of position and a per-frequency factor,
the table for a small grid is exactly the leading slice of the table
for any larger grid: truncation needs no interpolation.
"""

import torch

from ..errors import ConfigError


def axis_split(head_dim: int):
    """(d_t, d_h, d_w) block sizes; all even, remainder to time."""
    if head_dim % 2 or head_dim < 6:
        raise ConfigError(f"head dim {head_dim} cannot be split into three even rotary blocks")
    d_hw = 2 * (head_dim // 6)
    d_t = head_dim - 2 * d_hw
    return d_t, d_hw, d_hw


def axis_frequencies(d_axis: int, base: float) -> torch.Tensor:
    """Rotation frequencies for one axis block of size d_axis (even)."""
    i = torch.arange(d_axis // 2, dtype=torch.float32)
    return base ** (-2.0 * i / d_axis)


def axis_angle_table(n_positions: int, d_axis: int, base: float) -> torch.Tensor:
    """Angles (n_positions, d_axis/2); rows for a smaller grid are a prefix."""
    pos = torch.arange(n_positions, dtype=torch.float32)
    return pos[:, None] * axis_frequencies(d_axis, base)[None, :]


def rope_angles(positions: torch.Tensor, head_dim: int, base: float) -> torch.Tensor:
    """Angles (..., head_dim/2) for position triples (..., 3)."""
    if positions.shape[-1] != 3:
        raise ConfigError(f"positions must end in (t, h, w) triples, got {tuple(positions.shape)}")
    d_t, d_h, d_w = axis_split(head_dim)
    pos = positions.float()
    parts = []
    for axis, d_axis in zip(range(3), (d_t, d_h, d_w)):
        freqs = axis_frequencies(d_axis, base).to(positions.device)
        parts.append(pos[..., axis : axis + 1] * freqs)
    return torch.cat(parts, dim=-1)


def _rotate_half(x: torch.Tensor) -> torch.Tensor:
    half = x.shape[-1] // 2
    return torch.cat((-x[..., half:], x[..., :half]), dim=-1)


def rope3d_apply(features: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate features (..., S, head_dim) by their (..., S, 3) positions.

    Each axis block is rotated independently using the split-half pairing
    (element i pairs with i + d_axis/2 inside its block).
    """
    head_dim = features.shape[-1]
    angles = rope_angles(positions, head_dim, base)
    d_t, d_h, d_w = axis_split(head_dim)
    out = []
    off_f, off_a = 0, 0
    for d_axis in (d_t, d_h, d_w):
        block = features[..., off_f : off_f + d_axis]
        ang = angles[..., off_a : off_a + d_axis // 2]
        cos = torch.cat((ang.cos(), ang.cos()), dim=-1)
        sin = torch.cat((ang.sin(), ang.sin()), dim=-1)
        out.append(block * cos + _rotate_half(block) * sin)
        off_f += d_axis
        off_a += d_axis // 2
    return torch.cat(out, dim=-1)


def raster_positions(latent_frames: int, h: int, w: int) -> torch.Tensor:
    """(S, 3) position triples in raster order: time, then row, then column."""
    t = torch.arange(latent_frames)
    y = torch.arange(h)
    x = torch.arange(w)
    grid = torch.stack(torch.meshgrid(t, y, x, indexing="ij"), dim=-1)
    return grid.reshape(-1, 3)

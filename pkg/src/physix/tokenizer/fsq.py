"""Finite scalar quantization and mixed-radix token packing.

Each latent dimension j is squashed into the symmetric range of its level
count and rounded to an integer code. Odd level counts give codes
-(L-1)/2 .. (L-1)/2; even counts use the half-offset placement, giving
-L/2 .. L/2-1 (exactly L codes either way).

The backward pass treats the whole quantizer as identity: the forward
value is the integer code viewed as a real, the gradient w.r.t. the
pre-quantization latent is exactly 1.
"""

import math

import torch

from ..errors import ConfigError


class ScalarQuantizer(torch.nn.Module):
    def __init__(self, levels):
        super().__init__()
        levels = tuple(int(v) for v in levels)
        if not levels or any(v < 2 for v in levels):
            raise ConfigError(f"fsq levels must all be >= 2, got {levels}")
        self.levels = levels
        self.codebook_size = math.prod(levels)
        lv = torch.tensor(levels, dtype=torch.float64)
        half = (lv - 1.0) / 2.0
        offset = torch.where(lv % 2 == 0, torch.tensor(0.5, dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64))
        # pre-shift so that z=0 rounds to code 0 for even level counts too
        shift = torch.atanh(offset / half)
        self.register_buffer("half_range", half.float())
        self.register_buffer("offset", offset.float())
        self.register_buffer("shift", shift.float())

    @property
    def dim(self) -> int:
        return len(self.levels)

    def bound(self, z: torch.Tensor) -> torch.Tensor:
        """Squash latents (..., d) into each dimension's code range."""
        return torch.tanh(z + self.shift) * self.half_range - self.offset

    def quantize(self, z: torch.Tensor):
        """Return (codes int64, quantized float) for latents (..., d).

        ``quantized`` carries the straight-through gradient: forward value
        is the code, backward derivative w.r.t. ``z`` is identity.
        """
        if z.shape[-1] != self.dim:
            raise ConfigError(f"expected trailing dim {self.dim}, got {z.shape[-1]}")
        codes = torch.round(self.bound(z))
        quantized = z + (codes - z).detach()
        return codes.long(), quantized

    def code_preimage(self, codes: torch.Tensor) -> torch.Tensor:
        """A canonical latent that quantizes back to exactly ``codes``.

        The squash has no exact integer fixed points, so idempotence on
        the code lattice is phrased through this inverse: it lands within
        1e-6 of the code after squashing, which rounds back exactly.
        """
        target = (codes.float() + self.offset) / self.half_range
        target = target.clamp(-1.0, 1.0) * (1.0 - 1e-6)
        return torch.atanh(target) - self.shift

    def extra_repr(self) -> str:
        return f"levels={self.levels}, codebook_size={self.codebook_size}"


def _check_codes(codes: torch.Tensor, levels) -> torch.Tensor:
    lv = torch.tensor(levels, dtype=torch.long, device=codes.device)
    lo = torch.where(lv % 2 == 0, -(lv // 2), -((lv - 1) // 2))
    hi = torch.where(lv % 2 == 0, lv // 2 - 1, (lv - 1) // 2)
    if codes.shape[-1] != len(levels):
        raise ConfigError(f"codes trailing dim {codes.shape[-1]} != len(levels) {len(levels)}")
    if torch.any(codes < lo) or torch.any(codes > hi):
        raise ConfigError("codes outside level bounds")
    return lv


def pack_index(codes: torch.Tensor, levels) -> torch.Tensor:
    """Big-endian mixed-radix packing of code vectors (..., d) to flat ids.

    Digit j is code_j + levels_j // 2, so the most negative code vector
    maps to id 0 and the most positive to codebook_size - 1.
    """
    codes = codes.long()
    lv = _check_codes(codes, levels)
    digits = codes + lv // 2
    ids = torch.zeros(codes.shape[:-1], dtype=torch.long, device=codes.device)
    for j, L in enumerate(levels):
        ids = ids * L + digits[..., j]
    return ids


def unpack_index(ids: torch.Tensor, levels) -> torch.Tensor:
    """Inverse of pack_index; returns code vectors (..., d)."""
    ids = ids.long()
    size = math.prod(levels)
    if torch.any(ids < 0) or torch.any(ids >= size):
        raise ConfigError(f"token ids outside [0, {size})")
    lv = torch.tensor(levels, dtype=torch.long, device=ids.device)
    digits = []
    rest = ids
    for L in reversed(levels):
        digits.append(rest % L)
        rest = rest // L
    codes = torch.stack(list(reversed(digits)), dim=-1)
    return codes - lv // 2

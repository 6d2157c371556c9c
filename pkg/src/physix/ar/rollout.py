"""Token-space autoregressive continuation."""

from dataclasses import dataclass

import numpy as np
import torch

from ..determinism import derive_seed
from ..errors import ConfigError
from .model import TokenSequence


@dataclass
class RolloutRequest:
    context: TokenSequence
    horizon: int
    sampling: str = "greedy"
    temperature: float = 1.0
    top_k: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.context.grid_dims[0] < 1:
            raise ConfigError("rollout needs at least one context latent frame")
        if self.horizon < 1:
            raise ConfigError("rollout horizon must be at least one latent frame")
        if self.sampling not in ("greedy", "top_k", "temperature"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


def sample_token(logits: np.ndarray, mode: str, rng, temperature: float, top_k: int) -> int:
    """Pick the next token id; greedy breaks ties toward the lowest id."""
    if mode == "greedy":
        return int(np.argmax(logits))
    scaled = logits.astype(np.float64) / temperature
    if mode == "top_k":
        k = min(top_k, logits.shape[0])
        keep = np.argsort(-logits, kind="stable")[:k]
        p = np.exp(scaled[keep] - scaled[keep].max())
        p /= p.sum()
        return int(keep[rng.choice(k, p=p)])
    p = np.exp(scaled - scaled.max())
    p /= p.sum()
    return int(rng.choice(logits.shape[0], p=p))


def rollout(req: RolloutRequest, model) -> TokenSequence:
    """Generate ``horizon`` latent frames of tokens after the context.

    ``model`` exposes the stepwise protocol (init_state/step). Each new
    token is conditioned on the full context plus everything generated so
    far; the output sequence keeps the context's spatial grid.
    """
    m, h, w = req.context.grid_dims
    L = h * w
    total = len(req.context) + req.horizon * L
    max_context = getattr(getattr(model, "config", None), "max_context", None)
    if max_context is not None and total > max_context:
        raise ConfigError(
            f"context {len(req.context)} + horizon {req.horizon * L} tokens "
            f"exceeds max context {max_context}"
        )
    rng = np.random.default_rng(derive_seed(req.seed, "rollout"))

    state = model.init_state()
    logits = None
    with torch.no_grad():
        for i in range(len(req.context)):
            logits = model.step(state, int(req.context.tokens[i]), req.context.positions[i])
        new_tokens = []
        new_positions = []
        for t in range(m, m + req.horizon):
            for y in range(h):
                for x in range(w):
                    token = sample_token(
                        np.asarray(logits, dtype=np.float32),
                        req.sampling,
                        rng,
                        req.temperature,
                        req.top_k,
                    )
                    new_tokens.append(token)
                    pos = torch.tensor([t, y, x], dtype=torch.long)
                    new_positions.append(pos)
                    logits = model.step(state, token, pos)

    tokens = torch.cat([req.context.tokens, torch.tensor(new_tokens, dtype=torch.long)])
    positions = torch.cat([req.context.positions, torch.stack(new_positions)])
    return TokenSequence(
        tokens=tokens,
        positions=positions,
        grid_dims=(m + req.horizon, h, w),
        dataset=req.context.dataset,
    )

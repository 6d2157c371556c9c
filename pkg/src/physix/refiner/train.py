"""Refiner training: per-dataset MSE regression onto ground truth.

Cosine-decayed learning rate with no warmup (lr starts at base and ends
at zero), batches counted in frames. Everything stays in float32; mixed
precision noticeably hurts datasets whose residuals are tiny.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..determinism import derive_seed
from ..errors import ConfigError, DataError, TrainingDivergedError
from ..schedules import set_lr, warmup_cosine


@dataclass
class RefinerTrainConfig:
    epochs: int = 500
    base_lr: float = 5e-3
    batch_frames: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_frames < 1:
            raise ConfigError("epochs and batch_frames must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")


@dataclass
class RefinerTrainResult:
    steps: int
    final_loss: float
    epoch_losses: list = field(default_factory=list)


def _batch_tensors(samples, idx):
    ctx = torch.from_numpy(np.stack([samples[i].context for i in idx]))
    coarse = torch.from_numpy(np.stack([samples[i].coarse for i in idx]))
    target = torch.from_numpy(np.stack([samples[i].target for i in idx]))
    return ctx, coarse, target


def train_refiner(net, samples, cfg: RefinerTrainConfig) -> RefinerTrainResult:
    """Train one dataset's refiner on its slice of the corpus."""
    if next(net.parameters()).dtype != torch.float32:
        raise ConfigError("refiner parameters must be float32")
    data = [s for s in samples if s.dataset == net.dataset]
    if not data:
        raise DataError(f"corpus holds no samples for dataset {net.dataset!r}")

    n = len(data)
    steps_per_epoch = -(-n // cfg.batch_frames)
    total_steps = cfg.epochs * steps_per_epoch
    opt = torch.optim.Adam(net.parameters(), lr=cfg.base_lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, "refiner-train", net.dataset))

    step = 0
    epoch_losses = []
    last = float("nan")
    net.train()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_frames : (b + 1) * cfg.batch_frames]
            set_lr(opt, warmup_cosine(step, total_steps, 0, cfg.base_lr))
            ctx, coarse, target = _batch_tensors(data, idx)
            refined = net(ctx, coarse)
            loss = F.mse_loss(refined, target)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite refiner loss at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            last = float(loss.detach())
            running += last * len(idx)
            step += 1
        epoch_losses.append(running / n)
    net.eval()
    return RefinerTrainResult(steps=step, final_loss=last, epoch_losses=epoch_losses)

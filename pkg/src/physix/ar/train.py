"""AR model training: Adam, 1000-step warmup + cosine, periodic validation."""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..determinism import derive_seed
from ..errors import ConfigError, PairingError, TrainingDivergedError
from ..fields.balance import balance_datasets
from ..schedules import set_lr, warmup_cosine
from .model import ARTransformer, TokenSequence, ar_loss

log = logging.getLogger(__name__)


@dataclass
class ARTrainConfig:
    steps: int = 10000
    warmup_steps: int = 1000
    base_lr: float = 1e-3
    batch_size: int = 8
    window_latent_frames: int = 8
    validate_every: int = 100
    mask_context: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.window_latent_frames < 1:
            raise ConfigError("steps, batch_size, and window_latent_frames must be positive")
        if not 0 <= self.warmup_steps < self.steps:
            raise ConfigError(
                f"warmup_steps must lie in [0, steps), got {self.warmup_steps}/{self.steps}"
            )
        if self.base_lr <= 0 or self.validate_every < 1:
            raise ConfigError("base_lr must be positive and validate_every >= 1")


@dataclass
class ARTrainResult:
    best_step: int
    best_val: float
    val_history: list
    train_history: list


def _collate(windows):
    tokens = torch.stack([w.tokens for w in windows])
    positions = torch.stack([w.positions for w in windows])
    return tokens, positions


def _window(seq: TokenSequence, frames: int, rng) -> TokenSequence:
    m = seq.grid_dims[0]
    take = min(frames, m)
    start = int(rng.integers(0, m - take + 1))
    return seq.frame_slice(start, take)


def _batch_stream(data, cfg):
    """Endless balanced stream of (dataset, [window]) batches."""
    epoch = 0
    while True:
        sizes = {name: len(splits["train"]) for name, splits in data.items()}
        schedule = balance_datasets(sizes)
        rng = np.random.default_rng(derive_seed(cfg.seed, "ar-epoch", epoch))
        batches = []
        for name, idxs in schedule.entries.items():
            idxs = list(idxs)
            rng.shuffle(idxs)
            for i in range(0, len(idxs), cfg.batch_size):
                chunk = idxs[i : i + cfg.batch_size]
                batches.append((name, chunk))
        order = rng.permutation(len(batches))
        for j in order:
            name, chunk = batches[j]
            windows = [
                _window(data[name]["train"][idx], cfg.window_latent_frames, rng) for idx in chunk
            ]
            yield name, windows
        epoch += 1


def validation_loss_ar(model: ARTransformer, data: dict, cfg: ARTrainConfig):
    model.eval()
    per_dataset = {}
    with torch.no_grad():
        for name, splits in data.items():
            losses = []
            for seq in splits["val"]:
                win = seq.frame_slice(0, min(cfg.window_latent_frames, seq.grid_dims[0]))
                tokens, positions = _collate([win])
                logits = model(tokens, positions)
                losses.append(float(ar_loss(logits, tokens, win.tokens_per_frame, cfg.mask_context)))
            per_dataset[name] = float(np.mean(losses))
    model.train()
    return float(np.mean(list(per_dataset.values()))), per_dataset


def train_ar(
    model: ARTransformer, data: dict, cfg: ARTrainConfig, expected_vocab: int | None = None
) -> ARTrainResult:
    """Optimize the AR model on pre-tokenized trajectories.

    ``data`` maps dataset -> {"train": [TokenSequence], "val": [...]},
    full-trajectory sequences from the paired tokenizer. A vocab mismatch
    against ``expected_vocab`` is a pairing error caught before any step.
    """
    if expected_vocab is not None and expected_vocab != model.config.vocab_size:
        raise PairingError(
            f"AR vocab {model.config.vocab_size} != paired tokenizer codebook {expected_vocab}"
        )
    for name, splits in data.items():
        if not splits.get("train") or not splits.get("val"):
            raise ConfigError(f"dataset {name!r} needs non-empty train and val splits")
        for seq in splits["train"] + splits["val"]:
            if int(seq.tokens.max()) >= model.config.vocab_size:
                raise PairingError(f"dataset {name!r} holds token ids outside the model vocab")

    torch.manual_seed(derive_seed(cfg.seed, "ar-init"))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.base_lr)
    stream = _batch_stream(data, cfg)
    best = (float("inf"), -1, None)
    val_history, train_history = [], []
    model.train()
    for step in range(cfg.steps):
        lr = warmup_cosine(step, cfg.steps, cfg.warmup_steps, cfg.base_lr)
        set_lr(opt, lr)
        name, windows = next(stream)
        tokens, positions = _collate(windows)
        opt.zero_grad()
        logits = model(tokens, positions)
        loss = ar_loss(logits, tokens, windows[0].tokens_per_frame, cfg.mask_context)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"ar loss non-finite at step {step}, dataset {name}, lr {lr:.3e}"
            )
        loss.backward()
        opt.step()
        train_history.append(float(loss.detach()))
        if (step + 1) % cfg.validate_every == 0 or step == cfg.steps - 1:
            val_mean, per_dataset = validation_loss_ar(model, data, cfg)
            val_history.append((step, val_mean))
            if val_mean < best[0]:
                best = (val_mean, step, {k: v.detach().clone() for k, v in model.state_dict().items()})
            log.info("ar step %d: train %.4g val %.4g %s", step, train_history[-1], val_mean, per_dataset)

    if best[2] is not None:
        model.load_state_dict(best[2])
    model.eval()
    return ARTrainResult(
        best_step=best[1], best_val=best[0], val_history=val_history, train_history=train_history
    )

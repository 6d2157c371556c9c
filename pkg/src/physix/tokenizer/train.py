"""Tokenizer training: AdamW, warmup+cosine, multi-dataset balancing."""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..determinism import derive_seed
from ..errors import ConfigError, TrainingDivergedError
from ..fields.balance import balance_datasets
from ..schedules import set_lr, warmup_cosine
from .model import UniversalTokenizer

log = logging.getLogger(__name__)


@dataclass
class TokenizerTrainConfig:
    epochs: int = 200
    warmup_epochs: int = 10
    base_lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    window_frames: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.window_frames < 1:
            raise ConfigError("epochs, batch_size, and window_frames must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}/{self.epochs}"
            )
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")


@dataclass
class TrainResult:
    best_epoch: int
    best_val: float
    val_history: list
    train_history: list


def _sample_window(seq, frames, rng):
    max_start = seq.num_frames - frames
    start = 4 * int(rng.integers(0, max_start // 4 + 1)) if max_start > 0 else 0
    return seq.data[start : start + frames]


def _epoch_batches(data, cfg, epoch):
    """Yield (dataset, stacked window tensor) batches, balanced and shuffled."""
    sizes = {name: len(splits["train"]) for name, splits in data.items()}
    schedule = balance_datasets(sizes)
    rng = np.random.default_rng(derive_seed(cfg.seed, "tokenizer-epoch", epoch))
    order = schedule.epoch_order(derive_seed(cfg.seed, "tokenizer-order", epoch))
    pending = {name: [] for name in data}
    for name, idx in order:
        seq = data[name]["train"][idx]
        frames = min(cfg.window_frames, seq.num_frames - seq.num_frames % 4)
        pending[name].append(_sample_window(seq, frames, rng))
        if len(pending[name]) == cfg.batch_size:
            yield name, torch.from_numpy(np.stack(pending[name]))
            pending[name] = []
    for name, items in pending.items():
        if items:
            yield name, torch.from_numpy(np.stack(items))


def _recon_loss(model, dataset, batch):
    """MSE between the reconstruction and the normalized input batch."""
    B, M, C, H, W = batch.shape
    channels = list(model.config.datasets[dataset]["channels"])
    dense = model.embed_channels(batch.reshape(B * M, C, H, W), channels)
    recon = model.reconstruct(dense, dataset)
    return torch.mean((recon - batch.reshape(B * M, C, H, W)) ** 2)


def validation_loss(model, data):
    """Unweighted mean over datasets of mean reconstruction MSE on val."""
    model.eval()
    per_dataset = {}
    with torch.no_grad():
        for name, splits in data.items():
            losses = []
            for seq in splits["val"]:
                frames = seq.num_frames - seq.num_frames % 4
                batch = torch.from_numpy(seq.data[:frames])[None]
                losses.append(float(_recon_loss(model, name, batch)))
            per_dataset[name] = float(np.mean(losses))
    model.train()
    return float(np.mean(list(per_dataset.values()))), per_dataset


def train_tokenizer(model: UniversalTokenizer, data: dict, cfg: TokenizerTrainConfig) -> TrainResult:
    """Optimize encoder + decoders + pads; model ends loaded with the best epoch.

    ``data`` maps dataset name -> {"train": [FieldSequence], "val": [...]},
    all normalized. Selection is by unweighted mean validation loss.
    """
    for name, splits in data.items():
        if name not in model.config.datasets:
            raise ConfigError(f"dataset {name!r} has no decoder in the tokenizer config")
        if not splits.get("train") or not splits.get("val"):
            raise ConfigError(f"dataset {name!r} needs non-empty train and val splits")

    torch.manual_seed(derive_seed(cfg.seed, "tokenizer-init"))
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    max_size = max(len(s["train"]) for s in data.values())
    steps_per_epoch = max(1, len(data) * -(-max_size // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch

    best = (float("inf"), -1, None)
    val_history, train_history = [], []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for dataset, batch in _epoch_batches(data, cfg, epoch):
            lr = warmup_cosine(step, total_steps, warmup_steps, cfg.base_lr)
            set_lr(opt, lr)
            opt.zero_grad()
            loss = _recon_loss(model, dataset, batch)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"tokenizer loss non-finite at epoch {epoch}, step {step}, "
                    f"dataset {dataset}, lr {lr:.3e}"
                )
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
            step += 1
        train_history.append(float(np.mean(epoch_losses)))
        val_mean, per_dataset = validation_loss(model, data)
        val_history.append(val_mean)
        if val_mean < best[0]:
            best = (val_mean, epoch, {k: v.detach().clone() for k, v in model.state_dict().items()})
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.info("tokenizer epoch %d: train %.4g val %.4g %s", epoch, train_history[-1], val_mean, per_dataset)

    if best[2] is not None:
        model.load_state_dict(best[2])
    model.eval()
    return TrainResult(
        best_epoch=best[1], best_val=best[0], val_history=val_history, train_history=train_history
    )

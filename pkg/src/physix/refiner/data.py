"""Refinement corpus construction.

A refiner trains on (context, coarse, target) triples: k ground-truth
frames, one frame decoded from a greedy token rollout, and the matching
ground-truth frame. Each predicted frame of a rollout window becomes one
sample, labelled with its lead time (1 = first frame after the context).
Corpus files reuse the trajectory container layout with an extra
``/coarse`` group.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..ar.model import TokenSequence
from ..ar.rollout import RolloutRequest, rollout
from ..determinism import derive_seed
from ..errors import ConfigError, DataError, PairingError, ShapeMismatchError
from ..fields.container import read_container, write_container
from ..fields.types import TEMPORAL_FACTOR


@dataclass
class RefinerSample:
    """One training triple, all arrays normalized float32."""

    dataset: str
    channels: tuple
    context: np.ndarray  # (k, C, H, W) ground truth
    coarse: np.ndarray  # (C, H, W) decoded rollout frame
    target: np.ndarray  # (C, H, W) ground truth at the same timestamp
    lead_time: int

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.context = np.asarray(self.context, dtype=np.float32)
        self.coarse = np.asarray(self.coarse, dtype=np.float32)
        self.target = np.asarray(self.target, dtype=np.float32)
        self.lead_time = int(self.lead_time)
        if self.context.ndim != 4 or self.context.shape[1] != len(self.channels):
            raise ShapeMismatchError(
                f"context must be (k, {len(self.channels)}, H, W), got {self.context.shape}"
            )
        if self.coarse.shape != self.context.shape[1:]:
            raise ShapeMismatchError(
                f"coarse {self.coarse.shape} does not match context frames {self.context.shape[1:]}"
            )
        if self.target.shape != self.coarse.shape:
            raise ShapeMismatchError(f"target {self.target.shape} != coarse {self.coarse.shape}")
        if self.lead_time < 1:
            raise ConfigError("lead_time counts predicted frames and starts at 1")


def _window_starts(num_frames: int, context_frames: int, predicted: int) -> int:
    span = context_frames + predicted
    if num_frames < span:
        raise DataError(
            f"trajectory of {num_frames} frames too short for {context_frames} context "
            f"+ {predicted} predicted frames"
        )
    return (num_frames - span) // TEMPORAL_FACTOR + 1


def build_refiner_dataset(
    tokenizer,
    ar_model,
    sequences,
    windows_per_trajectory: int = 2,
    horizon_latent: int = 2,
    context_frames: int = 8,
    seed: int = 0,
    tokenizer_hash=None,
    paired_tokenizer_hash=None,
):
    """Roll the token model forward and pair its decoded frames with truth.

    For every sampled window: tokenize ``context_frames`` ground-truth
    frames, generate ``horizon_latent`` latent frames greedily, decode
    them, and emit one :class:`RefinerSample` per predicted pixel frame
    (so 10 trajectories x 2 windows x 8 predicted frames -> 160 samples).
    Deterministic for a given seed. If both checkpoint hashes are given
    they must agree, otherwise the tokenizer is not the one the token
    model was trained against.
    """
    if tokenizer_hash is not None and paired_tokenizer_hash is not None:
        if tokenizer_hash != paired_tokenizer_hash:
            raise PairingError(
                f"tokenizer {tokenizer_hash[:12]} is not the checkpoint the token model "
                f"was trained with ({paired_tokenizer_hash[:12]})"
            )
    if context_frames < TEMPORAL_FACTOR or context_frames % TEMPORAL_FACTOR:
        raise ConfigError(f"context_frames must be a positive multiple of {TEMPORAL_FACTOR}")
    if horizon_latent < 1 or windows_per_trajectory < 1:
        raise ConfigError("need at least one window and one latent frame of horizon")

    predicted = horizon_latent * TEMPORAL_FACTOR
    m_ctx = context_frames // TEMPORAL_FACTOR
    samples = []
    with torch.no_grad():
        for traj_idx, seq in enumerate(sequences):
            name = seq.spec.name
            n_starts = _window_starts(seq.num_frames, context_frames, predicted)
            rng = np.random.default_rng(derive_seed(seed, "refiner-windows", name, traj_idx))
            replace = n_starts < windows_per_trajectory
            picks = rng.choice(n_starts, size=windows_per_trajectory, replace=replace)
            for start_idx in picks:
                start = int(start_idx) * TEMPORAL_FACTOR
                grid = tokenizer.tokenize(seq.window(start, context_frames))
                req = RolloutRequest(
                    context=TokenSequence.from_grid(grid),
                    horizon=horizon_latent,
                    sampling="greedy",
                )
                full = rollout(req, ar_model)
                coarse = tokenizer.decode(full.frame_slice(m_ctx, horizon_latent).to_grid())
                coarse = coarse.cpu().numpy().astype(np.float32)
                context = seq.data[start : start + context_frames]
                targets = seq.data[start + context_frames : start + context_frames + predicted]
                for j in range(predicted):
                    samples.append(
                        RefinerSample(
                            dataset=name,
                            channels=seq.spec.channels,
                            context=context,
                            coarse=coarse[j],
                            target=targets[j],
                            lead_time=j + 1,
                        )
                    )
    return samples


def save_refiner_corpus(out_dir, samples) -> list:
    """Write one container file per sample.

    ``/fields/<ch>`` holds the context frames with the target appended
    as the final frame; ``/coarse/<ch>`` holds the single coarse frame.
    """
    out_dir = Path(out_dir)
    paths = []
    for i, s in enumerate(samples):
        fields = {}
        coarse = {}
        for c, ch in enumerate(s.channels):
            fields[ch] = np.concatenate([s.context[:, c], s.target[None, c]], axis=0)
            coarse[ch] = s.coarse[None, c]
        attrs = {
            "dataset_name": s.dataset,
            "channels": json.dumps(list(s.channels)),
            "lead_time": int(s.lead_time),
            "norm_state": "normalized",
        }
        path = out_dir / f"{s.dataset}_{i:05d}.h5"
        write_container(path, fields, attrs, coarse=coarse)
        paths.append(path)
    return paths


def load_refiner_corpus(corpus_dir) -> list:
    corpus_dir = Path(corpus_dir)
    paths = sorted(corpus_dir.glob("*.h5"))
    if not paths:
        raise DataError(f"no corpus files under {corpus_dir}")
    samples = []
    for path in paths:
        fields, attrs, coarse = read_container(path)
        if coarse is None:
            raise DataError(f"{path}: refiner corpus file lacks a /coarse group")
        for key in ("channels", "lead_time", "dataset_name"):
            if key not in attrs:
                raise DataError(f"{path}: missing attribute {key!r}")
        channels = json.loads(attrs["channels"])
        missing = [ch for ch in channels if ch not in fields or ch not in coarse]
        if missing:
            raise DataError(f"{path}: channels {missing} absent")
        stacked = np.stack([fields[ch] for ch in channels], axis=1)
        samples.append(
            RefinerSample(
                dataset=str(attrs["dataset_name"]),
                channels=channels,
                context=stacked[:-1],
                coarse=np.stack([coarse[ch][0] for ch in channels], axis=0),
                target=stacked[-1],
                lead_time=int(attrs["lead_time"]),
            )
        )
    return samples

"""The full prediction stack and its checkpoint pairing rules.

A stack is tokenizer + AR model + per-dataset normalization stats,
optionally with per-dataset refiners. Checkpoints are archive
directories; each downstream archive records the content hash of the
upstream components it was trained against, and loading verifies those
pairings before any prediction happens.

``predict`` follows the evaluation-driver protocol: raw-unit context
frames in, raw-unit predicted frames out. Refinement is applied to the
decoded frames only and never fed back into the token rollout.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .archive import Archive, arrays_to_state, load_archive, save_archive, state_to_arrays
from .ar.model import ARConfig, ARTransformer, TokenSequence
from .ar.rollout import RolloutRequest, rollout
from .errors import ConfigError, PairingError, ShapeMismatchError
from .fields.normalize import denormalize_array, normalize_array
from .fields.types import Boundary, DatasetSpec, FieldSequence, NormStats, TEMPORAL_FACTOR
from .refiner.model import RefinerBank, RefinerConfig
from .tokenizer.model import TokenizerConfig, UniversalTokenizer


def _expect_kind(archive: Archive, kind: str):
    found = archive.manifest.get("kind")
    if found != kind:
        raise PairingError(f"{archive.path} holds a {found!r} checkpoint, expected {kind!r}")


def save_tokenizer_checkpoint(path, model, stats: dict, extra: dict | None = None) -> str:
    manifest = dict(extra or {})
    manifest["kind"] = "tokenizer"
    manifest["norm_stats"] = {name: s.to_dict() for name, s in stats.items()}
    return save_archive(path, model.config.to_dict(), state_to_arrays(model.state_dict()), manifest)


def load_tokenizer_checkpoint(path):
    archive = load_archive(path)
    _expect_kind(archive, "tokenizer")
    model = UniversalTokenizer(TokenizerConfig.from_dict(archive.config))
    model.load_state_dict(arrays_to_state(archive.params))
    model.eval()
    stats = {name: NormStats.from_dict(d) for name, d in archive.manifest["norm_stats"].items()}
    return model, stats, archive


def save_ar_checkpoint(path, model, tokenizer_hash: str, extra: dict | None = None) -> str:
    manifest = dict(extra or {})
    manifest["kind"] = "ar"
    manifest["tokenizer_hash"] = tokenizer_hash
    return save_archive(path, model.config.to_dict(), state_to_arrays(model.state_dict()), manifest)


def load_ar_checkpoint(path):
    archive = load_archive(path)
    _expect_kind(archive, "ar")
    model = ARTransformer(ARConfig.from_dict(archive.config))
    model.load_state_dict(arrays_to_state(archive.params))
    model.eval()
    return model, archive


def save_refiner_checkpoint(path, bank, tokenizer_hash: str, ar_hash: str, extra: dict | None = None) -> str:
    manifest = dict(extra or {})
    manifest["kind"] = "refiner"
    manifest["tokenizer_hash"] = tokenizer_hash
    manifest["ar_hash"] = ar_hash
    return save_archive(path, bank.config.to_dict(), state_to_arrays(bank.state_dict()), manifest)


def load_refiner_checkpoint(path):
    archive = load_archive(path)
    _expect_kind(archive, "refiner")
    bank = RefinerBank(RefinerConfig.from_dict(archive.config))
    bank.load_state_dict(arrays_to_state(archive.params))
    bank.eval()
    return bank, archive


@dataclass
class ModelStack:
    tokenizer: UniversalTokenizer
    ar: ARTransformer
    stats: dict
    refiners: RefinerBank | None = None
    hashes: dict = field(default_factory=dict)
    context_frames: int = 8

    @classmethod
    def load(cls, tokenizer_path, ar_path, refiner_path=None, context_frames: int = 8) -> "ModelStack":
        tokenizer, stats, tok_archive = load_tokenizer_checkpoint(tokenizer_path)
        ar, ar_archive = load_ar_checkpoint(ar_path)
        if ar_archive.manifest["tokenizer_hash"] != tok_archive.content_hash:
            raise PairingError(
                "AR checkpoint was trained against tokenizer "
                f"{ar_archive.manifest['tokenizer_hash'][:12]}, "
                f"got {tok_archive.content_hash[:12]}"
            )
        if ar.config.vocab_size != tokenizer.config.codebook_size:
            raise PairingError(
                f"AR vocabulary {ar.config.vocab_size} != tokenizer codebook "
                f"{tokenizer.config.codebook_size}"
            )
        hashes = {"tokenizer": tok_archive.content_hash, "ar": ar_archive.content_hash}
        refiners = None
        if refiner_path is not None:
            refiners, ref_archive = load_refiner_checkpoint(refiner_path)
            for key, expect in (("tokenizer_hash", hashes["tokenizer"]), ("ar_hash", hashes["ar"])):
                if ref_archive.manifest[key] != expect:
                    raise PairingError(
                        f"refiner checkpoint {key} {ref_archive.manifest[key][:12]} "
                        f"does not match loaded stack ({expect[:12]})"
                    )
            hashes["refiner"] = ref_archive.content_hash
        return cls(
            tokenizer=tokenizer,
            ar=ar,
            stats=stats,
            refiners=refiners,
            hashes=hashes,
            context_frames=context_frames,
        )

    @property
    def datasets(self) -> list:
        return sorted(self.tokenizer.config.datasets)

    def dataset_spec(self, dataset: str, height: int, width: int) -> DatasetSpec:
        entry = self.tokenizer.config.datasets[dataset]
        return DatasetSpec(
            name=dataset,
            channels=tuple(entry["channels"]),
            height=height,
            width=width,
            boundary=Boundary.PERIODIC,
        )

    def predict(self, context, dataset: str, horizon: int, refine=None) -> np.ndarray:
        """Raw-unit context (k, C, H, W) -> raw-unit predictions (horizon, C, H, W)."""
        if refine is None:
            refine = self.refiners is not None
        if refine and self.refiners is None:
            raise ConfigError("stack was loaded without a refiner checkpoint")
        if dataset not in self.tokenizer.config.datasets:
            raise ConfigError(f"stack has no decoder for dataset {dataset!r}")
        if dataset not in self.stats:
            raise ConfigError(f"no normalization stats for dataset {dataset!r}")
        context = np.asarray(context, dtype=np.float32)
        if context.ndim != 4 or context.shape[0] % TEMPORAL_FACTOR:
            raise ShapeMismatchError(
                f"context must be (k, C, H, W) with k a multiple of {TEMPORAL_FACTOR}, "
                f"got {context.shape}"
            )
        if horizon < 1:
            raise ConfigError("horizon must be positive")
        k = context.shape[0]
        stats = self.stats[dataset]
        normalized = normalize_array(stats, context).astype(np.float32)
        seq = FieldSequence(
            data=normalized,
            spec=self.dataset_spec(dataset, context.shape[2], context.shape[3]),
            norm_state="normalized",
        )
        horizon_latent = -(-horizon // TEMPORAL_FACTOR)
        with torch.no_grad():
            grid = self.tokenizer.tokenize(seq)
            req = RolloutRequest(
                context=TokenSequence.from_grid(grid), horizon=horizon_latent, sampling="greedy"
            )
            full = rollout(req, self.ar)
            gen = full.frame_slice(k // TEMPORAL_FACTOR, horizon_latent).to_grid()
            frames = self.tokenizer.decode(gen)
            if refine:
                ctx = torch.from_numpy(normalized)[None].repeat(frames.shape[0], 1, 1, 1, 1)
                frames = self.refiners.refine(dataset, ctx, frames)
        out = denormalize_array(stats, frames.cpu().numpy()).astype(np.float32)
        return out[:horizon]

    def as_predictor(self, refine=None):
        """Bind the refine flag into an evaluation-protocol callable."""

        def predict(context, dataset, horizon):
            return self.predict(context, dataset, horizon, refine=refine)

        return predict

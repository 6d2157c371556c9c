"""Stage implementations behind the CLI subcommands.

Each stage locates its upstream artifacts through deterministic
content-addressed keys, reuses them when they already exist, and appends
one ledger record per invocation. All artifact directories are
write-once; re-running identical work lands on the same directory.
"""

import dataclasses
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import torch

from ..archive import load_archive
from ..ar import ARConfig, ARTrainConfig, ARTransformer, TokenSequence, train_ar
from ..determinism import DATA_DIR_ENV, configure_torch, derive_seed
from ..errors import ConfigError, DataError
from ..fields.container import (
    DataManifest,
    load_manifest,
    load_well_trajectory,
    read_group,
    save_manifest,
    save_trajectory,
    write_container,
)
from ..fields.generators import GENERATORS
from ..fields.normalize import apply_norm, fit_norm
from ..fields.types import Channel, ChannelUnion, TEMPORAL_FACTOR
from ..metrics import (
    EvalReport,
    MetricConfig,
    long_horizon_eval,
    next_frame_eval,
)
from ..refiner import (
    RefinerBank,
    RefinerConfig,
    RefinerTrainConfig,
    build_refiner_dataset,
    load_refiner_corpus,
    save_refiner_corpus,
    train_refiner,
)
from ..stack import (
    ModelStack,
    load_ar_checkpoint,
    load_tokenizer_checkpoint,
    save_ar_checkpoint,
    save_refiner_checkpoint,
    save_tokenizer_checkpoint,
)
from ..tokenizer import (
    TokenizerConfig,
    TokenizerTrainConfig,
    UniversalTokenizer,
    extend_tokenizer,
    train_tokenizer,
)
from .artifacts import ArtifactStore, ExperimentRecord, StageTimer, stage_key
from .config import RunConfig

ABLATION_AXES = ("multi_vs_single", "refine_on_off", "init_source", "model_size")


def store_for(cfg: RunConfig) -> ArtifactStore:
    return ArtifactStore(cfg.output_dir)


def data_root(cfg: RunConfig) -> Path:
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env).resolve()
    return cfg.output_dir / "data"


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


# ----- data generation -----


def data_key(cfg: RunConfig) -> str:
    return stage_key("generate-data", {"datasets": cfg.datasets}, seed=cfg.seed)


def _generate_one(name: str, entry: dict, seed: int, frames: int | None = None):
    gen = GENERATORS[entry["generator"]]
    kwargs = {**entry["params"], "dataset_name": name}
    try:
        return gen(
            T=entry["frames"] if frames is None else frames,
            H=entry["height"],
            W=entry["width"],
            seed=seed,
            **kwargs,
        )
    except TypeError as e:
        raise ConfigError(f"dataset {name!r}: bad generator params ({e})") from None


def _generate_split_files(cfg, name, entry, root):
    files = {}
    for split, count in entry["trajectories"].items():
        rels = []
        for i in range(count):
            rel = Path(name) / split / f"{name}_{split}_{i:04d}.h5"
            path = root / rel
            if not path.exists():
                seed = derive_seed(cfg.seed, "data", name, split, i)
                save_trajectory(path, _generate_one(name, entry, seed))
            rels.append(str(rel))
        files[split] = rels
    return files


def stage_generate_data(cfg: RunConfig, extra_datasets: dict | None = None) -> Path:
    """Write trajectory files plus the manifest; returns the manifest path."""
    store = store_for(cfg)
    root = data_root(cfg)
    # Base datasets first, extras (finetune) appended, so the channel union
    # only ever grows at the end when a run later adds a dataset.
    ordered = sorted(cfg.datasets) + sorted(n for n in (extra_datasets or {}) if n not in cfg.datasets)
    datasets = dict(cfg.datasets)
    datasets.update(extra_datasets or {})
    with StageTimer() as timer:
        splits = {}
        specs = {}
        for name in ordered:
            entry = datasets[name]
            splits[name] = _generate_split_files(cfg, name, entry, root)
            probe = _generate_one(
                name, entry, derive_seed(cfg.seed, "data", name, "spec", 0), frames=TEMPORAL_FACTOR
            )
            specs[name] = dataclasses.replace(
                probe.spec,
                counts={k: len(v) for k, v in splits[name].items()},
            )
        union_channels = []
        seen = set()
        for name in ordered:
            for ch in specs[name].channels:
                if ch not in seen:
                    seen.add(ch)
                    union_channels.append(Channel(ch, "scalar"))
        manifest = DataManifest(
            datasets=specs,
            splits=splits,
            union=ChannelUnion(tuple(union_channels)),
            root=root,
        )
        manifest_path = root / "manifest.json"
        save_manifest(manifest_path, manifest)
    n_files = sum(len(v) for s in splits.values() for v in s.values())
    store.append(
        ExperimentRecord(
            stage="generate-data",
            config_hash=cfg.hash,
            seed=cfg.seed,
            outputs={"manifest": _file_hash(manifest_path)},
            metrics={"datasets": ordered, "files": n_files},
            wall_seconds=timer.elapsed,
        )
    )
    return manifest_path


def _load_split(manifest: DataManifest, name: str, split: str) -> list:
    spec = manifest.datasets[name]
    return [load_well_trajectory(p, spec) for p in manifest.split_paths(name, split)]


def _require_manifest(cfg: RunConfig) -> DataManifest:
    path = data_root(cfg) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}; run generate-data first")
    return load_manifest(path)


def _init_archive(cfg: RunConfig, kind: str) -> Path | None:
    """Resolve ``init: import-checkpoint:<path>`` for one component.

    The path may point directly at a checkpoint directory or at another
    run's output directory, in which case the unique ``<path>/<kind>/h*``
    archive is used.
    """
    base = cfg.init_checkpoint
    if base is None:
        return None
    if (base / "manifest.json").exists():
        return base
    bucket = base / kind
    if bucket.exists():
        archives = sorted(d for d in bucket.iterdir() if (d / "manifest.json").exists())
        if len(archives) == 1:
            return archives[0]
        if archives:
            raise ConfigError(
                f"init checkpoint {base} holds {len(archives)} {kind} archives; point at one"
            )
    raise ConfigError(f"init checkpoint {base} has no {kind} archive to import")


# ----- tokenizer -----


def tokenizer_key(cfg: RunConfig) -> str:
    section = {
        "tokenizer": cfg.section("tokenizer"),
        "scope": cfg.datasets_in_scope(),
        "init": cfg.raw["init"],
    }
    return stage_key("train-tokenizer", section, inputs={"data": data_key(cfg)}, seed=cfg.seed)


def tokenizer_dir(cfg: RunConfig) -> Path:
    return store_for(cfg).stage_dir("tokenizer", tokenizer_key(cfg))


def _normalized_splits(manifest, scope):
    """Per-dataset stats plus normalized train/val sequences."""
    stats = {}
    data = {}
    for name in scope:
        train = _load_split(manifest, name, "train")
        val = _load_split(manifest, name, "val")
        if not train or not val:
            raise DataError(f"dataset {name!r} needs train and val trajectories")
        stats[name] = fit_norm(train)
        data[name] = {
            "train": [apply_norm(stats[name], s) for s in train],
            "val": [apply_norm(stats[name], s) for s in val],
        }
    return stats, data


def _tokenizer_config(cfg, manifest, scope) -> TokenizerConfig:
    section = cfg.section("tokenizer")
    if cfg.mode == "multi-task":
        # Restrict to the scope's channels so the config is unaffected by
        # extras (finetune datasets) later appended to the manifest union.
        in_scope = {ch for name in scope for ch in manifest.datasets[name].channels}
        union = tuple((c.name, c.kind) for c in manifest.union.channels if c.name in in_scope)
    else:
        union = tuple((ch, "scalar") for ch in manifest.datasets[scope[0]].channels)
    return TokenizerConfig(
        union=union,
        datasets={
            name: {
                "channels": manifest.datasets[name].channels,
                "height": manifest.datasets[name].height,
                "width": manifest.datasets[name].width,
            }
            for name in scope
        },
        fsq_levels=tuple(section["fsq_levels"]),
        width=int(section["width"]),
        depth=int(section["depth"]),
        attn_heads=int(section["attn_heads"]),
    )


def stage_train_tokenizer(cfg: RunConfig) -> Path:
    store = store_for(cfg)
    out = tokenizer_dir(cfg)
    key = tokenizer_key(cfg)
    if (out / "manifest.json").exists():
        archive = load_archive(out)
        store.append(
            ExperimentRecord(
                stage="train-tokenizer",
                config_hash=cfg.hash,
                seed=cfg.seed,
                inputs={"data": data_key(cfg)},
                outputs={"tokenizer": archive.content_hash},
                status="cached",
            )
        )
        return out
    manifest = _require_manifest(cfg)
    scope = cfg.datasets_in_scope()
    configure_torch()
    with StageTimer() as timer:
        stats, data = _normalized_splits(manifest, scope)
        torch.manual_seed(derive_seed(cfg.seed, "tokenizer-init"))
        model = UniversalTokenizer(_tokenizer_config(cfg, manifest, scope))
        init_path = _init_archive(cfg, "tokenizer")
        if init_path is not None:
            base, _, _ = load_tokenizer_checkpoint(init_path)
            model.load_state_dict(base.state_dict())
        section = cfg.section("tokenizer")["train"]
        tcfg = TokenizerTrainConfig(
            epochs=int(section["epochs"]),
            warmup_epochs=int(section["warmup_epochs"]),
            base_lr=float(section["base_lr"]),
            weight_decay=float(section["weight_decay"]),
            batch_size=int(section["batch_size"]),
            window_frames=int(section["window_frames"]),
            seed=derive_seed(cfg.seed, "train-tokenizer"),
        )
        result = train_tokenizer(model, data, tcfg)
        content = save_tokenizer_checkpoint(out, model, stats, extra={"stage_key": key})
    store.append(
        ExperimentRecord(
            stage="train-tokenizer",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs={"data": data_key(cfg)},
            outputs={"tokenizer": content},
            metrics={
                "best_epoch": result.best_epoch,
                "best_val": result.best_val,
                "parameters": model.parameter_count(),
            },
            wall_seconds=timer.elapsed,
        )
    )
    return out


# ----- AR -----


def ar_key(cfg: RunConfig) -> str:
    section = {"ar": cfg.section("ar"), "scope": cfg.datasets_in_scope(), "init": cfg.raw["init"]}
    return stage_key("train-ar", section, inputs={"tokenizer": tokenizer_key(cfg)}, seed=cfg.seed)


def ar_dir(cfg: RunConfig) -> Path:
    return store_for(cfg).stage_dir("ar", ar_key(cfg))


def _token_splits(tokenizer, stats, manifest, scope):
    data = {}
    with torch.no_grad():
        for name in scope:
            out = {}
            for split in ("train", "val"):
                seqs = [apply_norm(stats[name], s) for s in _load_split(manifest, name, split)]
                out[split] = [
                    TokenSequence.from_grid(tokenizer.tokenize(s)) for s in seqs
                ]
            data[name] = out
    return data


def _ar_config(cfg, vocab) -> ARConfig:
    section = cfg.section("ar")
    return ARConfig(
        vocab_size=vocab,
        layers=int(section["layers"]),
        heads=int(section["heads"]),
        width=int(section["width"]),
        ff_width=int(section["ff_width"]),
        max_context=int(section["max_context"]),
        rope_base=float(section["rope_base"]),
    )


def stage_train_ar(cfg: RunConfig) -> Path:
    store = store_for(cfg)
    out = ar_dir(cfg)
    if (out / "manifest.json").exists():
        archive = load_archive(out)
        store.append(
            ExperimentRecord(
                stage="train-ar",
                config_hash=cfg.hash,
                seed=cfg.seed,
                inputs={"tokenizer": tokenizer_key(cfg)},
                outputs={"ar": archive.content_hash},
                status="cached",
            )
        )
        return out
    tok_path = tokenizer_dir(cfg)
    tokenizer, stats, tok_archive = load_tokenizer_checkpoint(tok_path)
    manifest = _require_manifest(cfg)
    scope = cfg.datasets_in_scope()
    configure_torch()
    with StageTimer() as timer:
        data = _token_splits(tokenizer, stats, manifest, scope)
        torch.manual_seed(derive_seed(cfg.seed, "ar-init"))
        model = ARTransformer(_ar_config(cfg, tokenizer.config.codebook_size))
        init_path = _init_archive(cfg, "ar")
        if init_path is not None:
            base, _ = load_ar_checkpoint(init_path)
            model.load_state_dict(base.state_dict())
        section = cfg.section("ar")["train"]
        acfg = ARTrainConfig(
            steps=int(section["steps"]),
            warmup_steps=int(section["warmup_steps"]),
            base_lr=float(section["base_lr"]),
            batch_size=int(section["batch_size"]),
            window_latent_frames=int(section["window_latent_frames"]),
            validate_every=int(section["validate_every"]),
            seed=derive_seed(cfg.seed, "train-ar"),
        )
        result = train_ar(model, data, acfg, expected_vocab=tokenizer.config.codebook_size)
        content = save_ar_checkpoint(
            out, model, tokenizer_hash=tok_archive.content_hash, extra={"stage_key": ar_key(cfg)}
        )
    store.append(
        ExperimentRecord(
            stage="train-ar",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs={"tokenizer": tok_archive.content_hash},
            outputs={"ar": content},
            metrics={
                "best_step": result.best_step,
                "best_val": result.best_val,
                "parameters": sum(p.numel() for p in model.parameters()),
            },
            wall_seconds=timer.elapsed,
        )
    )
    return out


# ----- refiner -----


def refiner_scope(cfg: RunConfig) -> list:
    section = cfg.section("refiner")
    scope = section.get("datasets") or cfg.datasets_in_scope()
    unknown = [d for d in scope if d not in cfg.datasets]
    if unknown:
        raise ConfigError(f"refiner datasets {unknown} not in the run's datasets")
    return sorted(scope)


def refiner_data_key(cfg: RunConfig) -> str:
    section = {"refiner": cfg.section("refiner"), "scope": refiner_scope(cfg)}
    return stage_key(
        "build-refiner-data", section, inputs={"ar": ar_key(cfg)}, seed=cfg.seed
    )


def refiner_data_dir(cfg: RunConfig) -> Path:
    return store_for(cfg).stage_dir("refiner_data", refiner_data_key(cfg))


def stage_build_refiner_data(cfg: RunConfig) -> Path:
    store = store_for(cfg)
    out = refiner_data_dir(cfg)
    if (out / "index.json").exists():
        store.append(
            ExperimentRecord(
                stage="build-refiner-data",
                config_hash=cfg.hash,
                seed=cfg.seed,
                inputs={"ar": ar_key(cfg)},
                outputs={"corpus": refiner_data_key(cfg)},
                status="cached",
            )
        )
        return out
    stack = ModelStack.load(tokenizer_dir(cfg), ar_dir(cfg))
    manifest = _require_manifest(cfg)
    section = cfg.section("refiner")
    configure_torch()
    with StageTimer() as timer:
        samples = []
        for name in refiner_scope(cfg):
            seqs = [
                apply_norm(stack.stats[name], s) for s in _load_split(manifest, name, "train")
            ]
            samples.extend(
                build_refiner_dataset(
                    stack.tokenizer,
                    stack.ar,
                    seqs,
                    windows_per_trajectory=int(section["data"]["windows_per_trajectory"]),
                    horizon_latent=int(section["data"]["horizon_latent"]),
                    context_frames=int(section["context_frames"]),
                    seed=derive_seed(cfg.seed, "refiner-data", name),
                    tokenizer_hash=stack.hashes["tokenizer"],
                    paired_tokenizer_hash=stack.hashes["tokenizer"],
                )
            )
        save_refiner_corpus(out, samples)
        counts = {}
        for s in samples:
            counts[s.dataset] = counts.get(s.dataset, 0) + 1
        index = {
            "samples": len(samples),
            "per_dataset": counts,
            "lead_histogram": np.bincount([s.lead_time for s in samples]).tolist(),
            "tokenizer": stack.hashes["tokenizer"],
            "ar": stack.hashes["ar"],
        }
        (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    store.append(
        ExperimentRecord(
            stage="build-refiner-data",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs=dict(stack.hashes),
            outputs={"corpus": refiner_data_key(cfg)},
            metrics={"samples": len(samples), "per_dataset": counts},
            wall_seconds=timer.elapsed,
        )
    )
    return out


def refiner_key(cfg: RunConfig) -> str:
    return stage_key(
        "train-refiner",
        {"refiner": cfg.section("refiner")},
        inputs={"corpus": refiner_data_key(cfg)},
        seed=cfg.seed,
    )


def refiner_dir(cfg: RunConfig) -> Path:
    return store_for(cfg).stage_dir("refiner", refiner_key(cfg))


def stage_train_refiner(cfg: RunConfig) -> Path:
    store = store_for(cfg)
    out = refiner_dir(cfg)
    if (out / "manifest.json").exists():
        archive = load_archive(out)
        store.append(
            ExperimentRecord(
                stage="train-refiner",
                config_hash=cfg.hash,
                seed=cfg.seed,
                inputs={"corpus": refiner_data_key(cfg)},
                outputs={"refiner": archive.content_hash},
                status="cached",
            )
        )
        return out
    corpus_dir = refiner_data_dir(cfg)
    if not (corpus_dir / "index.json").exists():
        raise DataError(f"no refiner corpus at {corpus_dir}; run build-refiner-data first")
    index = json.loads((corpus_dir / "index.json").read_text())
    manifest = _require_manifest(cfg)
    section = cfg.section("refiner")
    configure_torch()
    with StageTimer() as timer:
        samples = load_refiner_corpus(corpus_dir)
        rcfg = RefinerConfig(
            datasets={
                name: {"channels": manifest.datasets[name].channels}
                for name in refiner_scope(cfg)
            },
            context_frames=int(section["context_frames"]),
            width=int(section["width"]),
            blocks_per_stage=int(section["blocks_per_stage"]),
            stages=int(section["stages"]),
        )
        torch.manual_seed(derive_seed(cfg.seed, "refiner-init"))
        bank = RefinerBank(rcfg)
        tcfg = RefinerTrainConfig(
            epochs=int(section["train"]["epochs"]),
            base_lr=float(section["train"]["base_lr"]),
            batch_frames=int(section["train"]["batch_frames"]),
            seed=derive_seed(cfg.seed, "train-refiner"),
        )
        losses = {}
        for name in refiner_scope(cfg):
            result = train_refiner(bank.nets[name], samples, tcfg)
            losses[name] = result.final_loss
        content = save_refiner_checkpoint(
            out, bank, tokenizer_hash=index["tokenizer"], ar_hash=index["ar"]
        )
    store.append(
        ExperimentRecord(
            stage="train-refiner",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs={"tokenizer": index["tokenizer"], "ar": index["ar"]},
            outputs={"refiner": content},
            metrics={"final_loss": losses},
            wall_seconds=timer.elapsed,
        )
    )
    return out


# ----- stack / rollout / eval -----


def load_stack(cfg: RunConfig, refine=None) -> ModelStack:
    want_refiner = cfg.refinement if refine is None else refine
    ref = refiner_dir(cfg) if want_refiner else None
    if ref is not None and not (ref / "manifest.json").exists():
        raise DataError(f"refinement is on but no refiner checkpoint at {ref}")
    stack = ModelStack.load(
        tokenizer_dir(cfg),
        ar_dir(cfg),
        ref,
        context_frames=int(cfg.section("eval")["context_frames"]),
    )
    store = store_for(cfg)
    for name, content in stack.hashes.items():
        store.verify_recorded(name, content)
    return stack


def stage_rollout(
    cfg: RunConfig, trajectory, context_frames: int | None = None, horizon: int = 8, refine=None
) -> Path:
    trajectory = Path(trajectory)
    store = store_for(cfg)
    manifest = _require_manifest(cfg)
    refine = cfg.refinement if refine is None else refine
    stack = load_stack(cfg, refine=refine)
    k = stack.context_frames if context_frames is None else int(context_frames)

    from ..fields.container import read_container

    _, attrs, _ = read_container(trajectory)
    name = str(attrs.get("dataset_name", ""))
    if name not in manifest.datasets:
        raise DataError(f"trajectory dataset {name!r} not in the manifest")
    seq = load_well_trajectory(trajectory, manifest.datasets[name])
    if seq.num_frames < k:
        raise DataError(f"trajectory has {seq.num_frames} frames, context needs {k}")
    context = seq.data[:k]
    with StageTimer() as timer:
        coarse = stack.predict(context, name, horizon, refine=False)
        refined = stack.predict(context, name, horizon, refine=True) if refine else None
        key = stage_key(
            "rollout",
            {"trajectory": trajectory.name, "k": k, "horizon": horizon, "refine": refine},
            inputs=dict(stack.hashes),
            seed=cfg.seed,
        )
        out_dir = store.stage_dir("rollouts", key)
        out_path = out_dir / f"rollout_{trajectory.stem}.h5"
        channels = seq.spec.channels
        attrs_out = {
            "dataset_name": name,
            "source": trajectory.name,
            "context_frames": k,
            "horizon": horizon,
            "tokenizer_hash": stack.hashes["tokenizer"],
            "ar_hash": stack.hashes["ar"],
        }
        if refine:
            attrs_out["refiner_hash"] = stack.hashes["refiner"]
        write_container(
            out_path,
            fields={ch: context[:, c] for c, ch in enumerate(channels)},
            attrs=attrs_out,
            coarse={ch: coarse[:, c] for c, ch in enumerate(channels)},
            refined=None if refined is None else {ch: refined[:, c] for c, ch in enumerate(channels)},
        )
    store.append(
        ExperimentRecord(
            stage="rollout",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs=dict(stack.hashes),
            outputs={"rollout": _file_hash(out_path)},
            metrics={"dataset": name, "horizon": horizon, "refine": bool(refine)},
            wall_seconds=timer.elapsed,
        )
    )
    return out_path


def _test_sequences(cfg, manifest, scope):
    seqs = []
    for name in scope:
        seqs.extend(_load_split(manifest, name, "test"))
    if not seqs:
        raise DataError("no test trajectories in scope")
    return seqs


def eval_key(cfg: RunConfig, protocol: str, refine: bool) -> str:
    return stage_key(
        "eval",
        {"eval": cfg.section("eval"), "protocol": protocol, "refine": refine},
        inputs={"ar": ar_key(cfg), "refiner": refiner_key(cfg) if refine else None},
        seed=cfg.seed,
    )


def stage_eval(cfg: RunConfig, protocol: str = "next", refine=None, make_plots: bool = True) -> Path:
    if protocol not in ("next", "rollout"):
        raise ConfigError(f"protocol must be next or rollout, got {protocol!r}")
    refine = cfg.refinement if refine is None else refine
    store = store_for(cfg)
    stack = load_stack(cfg, refine=refine)
    manifest = _require_manifest(cfg)
    scope = cfg.datasets_in_scope()
    section = cfg.section("eval")
    seqs = _test_sequences(cfg, manifest, scope)
    label = f"stack[{'refined' if refine else 'coarse'}]"
    configure_torch()
    with StageTimer() as timer:
        predictor = stack.as_predictor(refine=refine)
        if protocol == "next":
            report = next_frame_eval(
                predictor,
                seqs,
                windows=int(section["windows"]),
                context_frames=int(section["context_frames"]),
                seed=derive_seed(cfg.seed, "eval"),
                label=label,
            )
        else:
            report = long_horizon_eval(
                predictor,
                seqs,
                context_frames=int(section["context_frames"]),
                label=label,
            )
        out = store.stage_dir("eval", eval_key(cfg, protocol, refine))
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(report.to_text())
        if protocol == "rollout":
            (out / "curves.csv").write_text(report.curves_csv())
        if make_plots:
            plot_report(out, stack=stack, sequences=seqs, context_frames=int(section["context_frames"]))
    store.append(
        ExperimentRecord(
            stage="eval",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs=dict(stack.hashes),
            outputs={"report": _file_hash(out / "report.json")},
            metrics={
                "protocol": protocol,
                "refine": bool(refine),
                "field_avg": {d: report.field_average(d, (1, 1)) for d in report.datasets},
            },
            wall_seconds=timer.elapsed,
        )
    )
    return out


# ----- plots -----


def plot_report(report_dir, stack=None, sequences=None, context_frames: int = 8) -> list:
    """Render curve plots (and, given a stack, qualitative panels)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_dir = Path(report_dir)
    report_path = report_dir / "report.json"
    if not report_path.exists():
        raise DataError(f"no report.json under {report_dir}")
    report = EvalReport.from_json(report_path.read_text())
    written = []
    for dataset in sorted(report.curves):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for fieldname, pts in sorted(report.curves[dataset].items()):
            leads = [p[0] for p in pts]
            vals = [p[1] for p in pts]
            ax.plot(leads, vals, marker="o", markersize=2.5, label=fieldname)
        ax.set_xlabel("lead time (frames)")
        ax.set_ylabel("VRMSE")
        ax.set_title(dataset)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = report_dir / f"curves_{dataset}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    if stack is not None and sequences:
        by_dataset = {}
        for seq in sequences:
            by_dataset.setdefault(seq.spec.name, seq)
        for dataset, seq in sorted(by_dataset.items()):
            if seq.num_frames < context_frames + 1:
                continue
            pred = stack.predict(seq.data[:context_frames], dataset, TEMPORAL_FACTOR)
            truth = seq.data[context_frames]
            C = truth.shape[0]
            fig, axes = plt.subplots(C, 3, figsize=(7, 2.2 * C), squeeze=False)
            for c, ch in enumerate(seq.spec.channels):
                for j, (img, title) in enumerate(
                    [(truth[c], "truth"), (pred[0, c], "prediction"), (truth[c] - pred[0, c], "error")]
                ):
                    ax = axes[c][j]
                    ax.imshow(img)
                    ax.set_title(f"{ch}: {title}", fontsize=8)
                    ax.axis("off")
            fig.tight_layout()
            path = report_dir / f"panel_{dataset}.png"
            fig.savefig(path, dpi=110)
            plt.close(fig)
            written.append(path)
    return written


# ----- finetune -----


def finetune_keys(cfg: RunConfig, from_scratch: bool) -> dict:
    section = {"finetune": cfg.section("finetune"), "from_scratch": from_scratch}
    base = stage_key("finetune", section, inputs={"ar": ar_key(cfg)}, seed=cfg.seed)
    return {"tokenizer": base, "ar": base}


def finetune_dirs(cfg: RunConfig, from_scratch: bool = False) -> dict:
    keys = finetune_keys(cfg, from_scratch)
    store = store_for(cfg)
    suffix = "_scratch" if from_scratch else ""
    return {
        "tokenizer": store.stage_dir(f"finetune_tokenizer{suffix}", keys["tokenizer"]),
        "ar": store.stage_dir(f"finetune_ar{suffix}", keys["ar"]),
    }


def stage_finetune(cfg: RunConfig, from_scratch: bool = False) -> dict:
    section = cfg.section("finetune")
    if "dataset" not in section:
        raise ConfigError("config has no finetune.dataset section")
    (new_name, entry), = section["dataset"].items()
    store = store_for(cfg)
    dirs = finetune_dirs(cfg, from_scratch)
    if all((d / "manifest.json").exists() for d in dirs.values()):
        store.append(
            ExperimentRecord(
                stage="finetune",
                config_hash=cfg.hash,
                seed=cfg.seed,
                inputs={"ar": ar_key(cfg)},
                outputs={k: load_archive(d).content_hash for k, d in dirs.items()},
                status="cached",
            )
        )
        return dirs

    base_tok, base_stats, base_tok_archive = load_tokenizer_checkpoint(tokenizer_dir(cfg))
    base_ar, base_ar_archive = load_ar_checkpoint(ar_dir(cfg))
    stage_generate_data(cfg, extra_datasets={new_name: entry})
    manifest = _require_manifest(cfg)
    spec = manifest.datasets[new_name]
    configure_torch()
    with StageTimer() as timer:
        novel = [ch for ch in spec.channels if ch not in base_tok.config.union_names]
        torch.manual_seed(derive_seed(cfg.seed, "finetune-extend"))
        model = extend_tokenizer(
            base_tok,
            {new_name: {"channels": spec.channels, "height": spec.height, "width": spec.width}},
            new_union=tuple((ch, "scalar") for ch in novel),
        )
        stats, data = _normalized_splits(manifest, [new_name])
        merged_stats = dict(base_stats)
        merged_stats.update(stats)
        tok_train = cfg.section("tokenizer")["train"]
        epochs = int(section["tokenizer_epochs"])
        tcfg = TokenizerTrainConfig(
            epochs=epochs,
            warmup_epochs=min(int(tok_train["warmup_epochs"]), max(1, epochs // 10)),
            base_lr=float(tok_train["base_lr"]),
            weight_decay=float(tok_train["weight_decay"]),
            batch_size=int(tok_train["batch_size"]),
            window_frames=int(tok_train["window_frames"]),
            seed=derive_seed(cfg.seed, "finetune-tokenizer"),
        )
        tok_result = train_tokenizer(model, data, tcfg)
        tok_content = save_tokenizer_checkpoint(
            dirs["tokenizer"],
            model,
            merged_stats,
            extra={"finetuned_from": base_tok_archive.content_hash, "dataset": new_name},
        )

        tokens = _token_splits(model, merged_stats, manifest, [new_name])
        torch.manual_seed(derive_seed(cfg.seed, "finetune-ar-init"))
        ar_model = ARTransformer(_ar_config(cfg, model.config.codebook_size))
        if not from_scratch:
            ar_model.load_state_dict(base_ar.state_dict())
        iters = int(section["ar_iterations"])
        ar_train = cfg.section("ar")["train"]
        acfg = ARTrainConfig(
            steps=iters,
            warmup_steps=max(1, iters // 10),
            base_lr=float(ar_train["base_lr"]),
            batch_size=int(ar_train["batch_size"]),
            window_latent_frames=int(ar_train["window_latent_frames"]),
            validate_every=min(int(ar_train["validate_every"]), iters),
            seed=derive_seed(cfg.seed, "finetune-ar"),
        )
        ar_result = train_ar(ar_model, tokens, acfg, expected_vocab=model.config.codebook_size)
        ar_content = save_ar_checkpoint(
            dirs["ar"],
            ar_model,
            tokenizer_hash=tok_content,
            extra={
                "finetuned_from": None if from_scratch else base_ar_archive.content_hash,
                "dataset": new_name,
            },
        )
    pretrain_epochs = int(cfg.section("tokenizer")["train"]["epochs"])
    pretrain_steps = int(cfg.section("ar")["train"]["steps"])
    store.append(
        ExperimentRecord(
            stage="finetune",
            config_hash=cfg.hash,
            seed=cfg.seed,
            inputs={
                "tokenizer": base_tok_archive.content_hash,
                "ar": base_ar_archive.content_hash,
            },
            outputs={"tokenizer": tok_content, "ar": ar_content},
            metrics={
                "dataset": new_name,
                "from_scratch": from_scratch,
                "tokenizer_epochs": epochs,
                "tokenizer_budget_ratio": epochs / pretrain_epochs,
                "ar_iterations": iters,
                "ar_budget_ratio": iters / pretrain_steps,
                "novel_channels": novel,
                "tokenizer_best_val": tok_result.best_val,
                "ar_best_val": ar_result.best_val,
            },
            wall_seconds=timer.elapsed,
        )
    )
    return dirs


def finetuned_stack(cfg: RunConfig, from_scratch: bool = False) -> ModelStack:
    dirs = finetune_dirs(cfg, from_scratch)
    return ModelStack.load(
        dirs["tokenizer"], dirs["ar"], context_frames=int(cfg.section("eval")["context_frames"])
    )


# ----- ablation -----


def _bucket_rows(report: EvalReport, arm: str) -> list:
    rows = []
    for dataset in report.datasets:
        buckets = sorted({e.bucket for e in report.entries if e.dataset == dataset})
        for b in buckets:
            rows.append(
                {
                    "arm": arm,
                    "dataset": dataset,
                    "bucket": list(b),
                    "vrmse": report.field_average(dataset, b),
                }
            )
    return rows


def _mse_curves(stack, seqs, context_frames, max_lead=8):
    out = []
    by_dataset = {}
    for seq in seqs:
        by_dataset.setdefault(seq.spec.name, []).append(seq)
    for dataset, group in sorted(by_dataset.items()):
        sums = {}
        counts = {}
        for seq in group:
            horizon = min(seq.num_frames - context_frames, max_lead)
            if horizon < 1:
                continue
            pred = stack.predict(seq.data[:context_frames], dataset, horizon)
            for i in range(horizon):
                err = float(np.mean((pred[i] - seq.data[context_frames + i]) ** 2))
                sums[i + 1] = sums.get(i + 1, 0.0) + err
                counts[i + 1] = counts.get(i + 1, 0) + 1
        for lead in sorted(sums):
            out.append({"dataset": dataset, "lead": lead, "mse": sums[lead] / counts[lead]})
    return out


def validate_ablation_report(doc: dict) -> None:
    """Schema check for ablation outputs; raises DataError on violations."""
    if doc.get("axis") not in ABLATION_AXES:
        raise DataError(f"unknown ablation axis {doc.get('axis')!r}")
    arms = doc.get("arms")
    if not isinstance(arms, list) or len(arms) < 2:
        raise DataError("ablation report needs at least two arms")
    rows = doc.get("rows")
    if not isinstance(rows, list) or not rows:
        raise DataError("ablation report has no rows")
    for row in rows:
        for key in ("arm", "dataset", "bucket", "vrmse"):
            if key not in row:
                raise DataError(f"ablation row missing {key!r}: {row}")
        if row["arm"] not in arms:
            raise DataError(f"row references unknown arm {row['arm']!r}")
        if not np.isfinite(row["vrmse"]):
            raise DataError("non-finite vrmse in ablation row")
    if doc["axis"] == "refine_on_off" and "mse_curves" not in doc:
        raise DataError("refine_on_off report must carry mse_curves")


def _render_ablation_text(doc: dict) -> str:
    lines = [f"axis: {doc['axis']}", f"arms: {', '.join(doc['arms'])}"]
    header = f"{'dataset':<20} {'bucket':>7} " + " ".join(f"{a:>14}" for a in doc["arms"])
    lines.append(header)
    lines.append("-" * len(header))
    cells = {}
    for row in doc["rows"]:
        cells[(row["dataset"], tuple(row["bucket"]), row["arm"])] = row["vrmse"]
    keys = sorted({(r["dataset"], tuple(r["bucket"])) for r in doc["rows"]})
    for dataset, bucket in keys:
        label = f"{bucket[0]}" if bucket[0] == bucket[1] else f"{bucket[0]}:{bucket[1]}"
        vals = " ".join(
            f"{cells.get((dataset, bucket, arm), float('nan')):>14.4f}" for arm in doc["arms"]
        )
        lines.append(f"{dataset:<20} {label:>7} {vals}")
    return "\n".join(lines) + "\n"


def stage_ablate(cfg: RunConfig, axis: str) -> Path:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    store = store_for(cfg)
    manifest_needed = _require_manifest(cfg)
    del manifest_needed
    doc = {"axis": axis, "arms": [], "rows": []}
    configure_torch()
    with StageTimer() as timer:
        if axis == "refine_on_off":
            stage_train_tokenizer(cfg)
            stage_train_ar(cfg)
            stage_build_refiner_data(cfg)
            stage_train_refiner(cfg)
            manifest = _require_manifest(cfg)
            seqs = _test_sequences(cfg, manifest, cfg.datasets_in_scope())
            k = int(cfg.section("eval")["context_frames"])
            doc["arms"] = ["coarse", "refined"]
            for arm, refine in (("coarse", False), ("refined", True)):
                out = stage_eval(cfg, protocol="rollout", refine=refine, make_plots=False)
                report = EvalReport.from_json((out / "report.json").read_text())
                doc["rows"].extend(_bucket_rows(report, arm))
                doc.setdefault("vrmse_curves", {})[arm] = report.to_dict()["curves"]
                stack = load_stack(cfg, refine=refine)
                doc.setdefault("mse_curves", {})[arm] = _mse_curves(stack, seqs, k)
        elif axis == "multi_vs_single":
            doc["arms"] = ["specialized", "universal"]
            multi = cfg.with_overrides({"mode": "multi-task"})
            stage_train_tokenizer(multi)
            stage_train_ar(multi)
            out = stage_eval(multi, protocol="rollout", refine=False, make_plots=False)
            universal = EvalReport.from_json((out / "report.json").read_text())
            doc["rows"].extend(_bucket_rows(universal, "universal"))
            for name in sorted(cfg.datasets):
                single = cfg.with_overrides({"mode": f"single-task:{name}"})
                stage_train_tokenizer(single)
                stage_train_ar(single)
                out = stage_eval(single, protocol="rollout", refine=False, make_plots=False)
                report = EvalReport.from_json((out / "report.json").read_text())
                doc["rows"].extend(_bucket_rows(report, "specialized"))
        elif axis == "init_source":
            base = cfg.section("ablate").get("init_checkpoint")
            if not base:
                raise ConfigError("init_source ablation needs ablate.init_checkpoint in the config")
            doc["arms"] = ["scratch", "pretrained-init"]
            for arm, init in (("scratch", "scratch"), ("pretrained-init", f"import-checkpoint:{base}")):
                arm_cfg = cfg.with_overrides({"init": init})
                stage_train_tokenizer(arm_cfg)
                stage_train_ar(arm_cfg)
                out = stage_eval(arm_cfg, protocol="rollout", refine=False, make_plots=False)
                report = EvalReport.from_json((out / "report.json").read_text())
                doc["rows"].extend(_bucket_rows(report, arm))
        else:  # model_size
            sizes = cfg.section("ablate")["model_sizes"]
            if not sizes:
                raise ConfigError("model_size ablation needs a non-empty ablate.model_sizes list")
            for size in sizes:
                width = int(size["width"])
                layers = int(size["layers"])
                arm = f"w{width}-l{layers}"
                doc["arms"].append(arm)
                arm_cfg = cfg.with_overrides(
                    {"ar": {"width": width, "layers": layers, "ff_width": 4 * width}}
                )
                stage_train_tokenizer(arm_cfg)
                stage_train_ar(arm_cfg)
                out = stage_eval(arm_cfg, protocol="rollout", refine=False, make_plots=False)
                report = EvalReport.from_json((out / "report.json").read_text())
                doc["rows"].extend(_bucket_rows(report, arm))
        validate_ablation_report(doc)
        key = stage_key("ablate", {"axis": axis, "cfg": cfg.hash}, seed=cfg.seed)
        out_dir = store.stage_dir("ablation", key)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        (out_dir / "report.txt").write_text(_render_ablation_text(doc))
    store.append(
        ExperimentRecord(
            stage="ablate",
            config_hash=cfg.hash,
            seed=cfg.seed,
            outputs={"report": _file_hash(out_dir / "report.json")},
            metrics={"axis": axis, "arms": doc["arms"]},
            wall_seconds=timer.elapsed,
        )
    )
    return out_dir

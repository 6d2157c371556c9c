"""Run configuration: one YAML file drives every subcommand.

Layout (all sections except ``datasets`` have working defaults):

    output_dir: runs/toy
    seed: 0
    mode: multi-task            # or single-task:<dataset>
    init: scratch               # or import-checkpoint:<path>
    refinement: "on"            # or "off"
    datasets:
      gray_scott:
        generator: gray_scott
        height: 64
        width: 64
        frames: 56
        trajectories: {train: 8, val: 2, test: 2}
        params: {feed_rate: 0.035, ...}
    tokenizer: {...model + train overrides...}
    ar: {...}
    refiner: {...}
    eval: {windows: 12, context_frames: 8}
    finetune: {dataset: {...one datasets-style entry...}, ...}
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..archive import config_hash
from ..errors import ConfigError
from ..fields.generators import GENERATORS
from ..fields.types import SPATIAL_FACTOR, TEMPORAL_FACTOR

DEFAULTS = {
    "seed": 0,
    "mode": "multi-task",
    "init": "scratch",
    "refinement": "on",
    "tokenizer": {
        "fsq_levels": [8, 8, 8, 5, 5, 5],
        "width": 64,
        "depth": 2,
        "attn_heads": 4,
        "train": {
            "epochs": 1000,
            "warmup_epochs": 10,
            "base_lr": 1e-3,
            "weight_decay": 0.01,
            "batch_size": 32,
            "window_frames": 16,
        },
    },
    "ar": {
        "layers": 4,
        "heads": 4,
        "width": 192,
        "ff_width": 768,
        "max_context": 4096,
        "rope_base": 10000.0,
        "train": {
            "steps": 10000,
            "warmup_steps": 1000,
            "base_lr": 1e-3,
            "batch_size": 32,
            "window_latent_frames": 8,
            "validate_every": 100,
        },
    },
    "refiner": {
        "context_frames": 8,
        "width": 32,
        "blocks_per_stage": 1,
        "stages": 2,
        "data": {"windows_per_trajectory": 2, "horizon_latent": 2},
        "train": {"epochs": 500, "base_lr": 5e-3, "batch_frames": 64},
    },
    "eval": {"windows": 16, "context_frames": 8},
    "finetune": {"tokenizer_epochs": 100, "ar_iterations": 1000},
    "ablate": {"model_sizes": [{"width": 96, "layers": 2}, {"width": 192, "layers": 4}]},
}

_SPLITS = ("train", "val", "test")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_dataset_entry(name: str, entry: dict) -> dict:
    if not isinstance(entry, dict):
        raise ConfigError(f"dataset {name!r} section must be a mapping")
    gen = entry.get("generator")
    if gen not in GENERATORS:
        raise ConfigError(f"dataset {name!r}: unknown generator {gen!r} (have {sorted(GENERATORS)})")
    for key in ("height", "width", "frames"):
        if key not in entry:
            raise ConfigError(f"dataset {name!r}: missing {key!r}")
    H, W, T = int(entry["height"]), int(entry["width"]), int(entry["frames"])
    if H % SPATIAL_FACTOR or W % SPATIAL_FACTOR:
        raise ConfigError(f"dataset {name!r}: {H}x{W} not divisible by {SPATIAL_FACTOR}")
    if T % TEMPORAL_FACTOR:
        raise ConfigError(f"dataset {name!r}: {T} frames not divisible by {TEMPORAL_FACTOR}")
    counts = entry.get("trajectories", {})
    if not isinstance(counts, dict) or not counts:
        raise ConfigError(f"dataset {name!r}: needs a trajectories: {{split: count}} mapping")
    for split, n in counts.items():
        if split not in _SPLITS:
            raise ConfigError(f"dataset {name!r}: unknown split {split!r}")
        if int(n) < 0:
            raise ConfigError(f"dataset {name!r}: negative trajectory count for {split!r}")
    out = dict(entry)
    out["height"], out["width"], out["frames"] = H, W, T
    out["trajectories"] = {s: int(counts.get(s, 0)) for s in _SPLITS}
    out.setdefault("params", {})
    return out


@dataclass
class RunConfig:
    path: Path
    raw: dict
    output_dir: Path = field(init=False)

    def __post_init__(self):
        self.raw = _deep_merge(DEFAULTS, self.raw)
        if "output_dir" not in self.raw:
            raise ConfigError("config needs an output_dir")
        if "datasets" not in self.raw or not self.raw["datasets"]:
            raise ConfigError("config needs a non-empty datasets section")
        base = self.path.parent if self.path else Path(".")
        self.output_dir = (base / str(self.raw["output_dir"])).resolve()
        self.raw["datasets"] = {
            name: _check_dataset_entry(name, entry)
            for name, entry in self.raw["datasets"].items()
        }
        mode = self.raw["mode"]
        if mode != "multi-task":
            if not mode.startswith("single-task:"):
                raise ConfigError(f"mode must be multi-task or single-task:<name>, got {mode!r}")
            target = mode.split(":", 1)[1]
            if target not in self.raw["datasets"]:
                raise ConfigError(f"single-task dataset {target!r} not in the datasets section")
        init = self.raw["init"]
        if init != "scratch":
            if not init.startswith("import-checkpoint:"):
                raise ConfigError(f"init must be scratch or import-checkpoint:<path>, got {init!r}")
            ckpt = base / init.split(":", 1)[1]
            if not ckpt.exists():
                raise ConfigError(f"init checkpoint {ckpt} does not exist")
        if str(self.raw["refinement"]).lower() not in ("on", "off", "true", "false"):
            raise ConfigError("refinement must be on or off")
        ft = self.raw.get("finetune", {})
        if "dataset" in ft:
            names = list(ft["dataset"])
            if len(names) != 1:
                raise ConfigError("finetune.dataset must hold exactly one dataset entry")
            if names[0] in self.raw["datasets"]:
                raise ConfigError(f"finetune dataset {names[0]!r} already in the base datasets")
            ft["dataset"] = {names[0]: _check_dataset_entry(names[0], ft["dataset"][names[0]])}

    # ----- accessors -----

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def refinement(self) -> bool:
        return str(self.raw["refinement"]).lower() in ("on", "true")

    @property
    def init_checkpoint(self):
        init = self.raw["init"]
        if init == "scratch":
            return None
        return ((self.path.parent if self.path else Path(".")) / init.split(":", 1)[1]).resolve()

    @property
    def datasets(self) -> dict:
        return self.raw["datasets"]

    def datasets_in_scope(self) -> list:
        if self.mode == "multi-task":
            return sorted(self.datasets)
        return [self.mode.split(":", 1)[1]]

    def section(self, name: str) -> dict:
        return self.raw[name]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """A re-validated copy with the given settings merged in (ablation arms)."""
        return RunConfig(path=self.path, raw=_deep_merge(self.raw, overrides))

    @property
    def hash(self) -> str:
        return config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return RunConfig(path=path, raw=doc)

import pytest
import yaml

from physix.errors import ConfigError
from physix.pipeline.config import DEFAULTS, RunConfig, load_run_config

MINIMAL = {
    "output_dir": "run",
    "datasets": {
        "heat": {
            "generator": "heat",
            "height": 16,
            "width": 16,
            "frames": 16,
            "trajectories": {"train": 2, "val": 1, "test": 1},
            "params": {"viscosity": 0.02, "dt": 0.02, "init_mode": "random_smooth"},
        }
    },
}


def make(tmp_path, **overrides):
    raw = {**{k: v for k, v in MINIMAL.items()}, **overrides}
    return RunConfig(path=tmp_path / "run.yaml", raw=raw)


def write_and_load(tmp_path, doc):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    return load_run_config(path)


class TestDefaults:
    def test_sections_filled_in(self, tmp_path):
        cfg = make(tmp_path)
        assert cfg.section("tokenizer")["width"] == 64
        assert cfg.section("ar")["train"]["steps"] == 10000
        assert cfg.section("refiner")["train"]["base_lr"] == 5e-3
        assert cfg.seed == 0 and cfg.mode == "multi-task" and cfg.refinement

    def test_partial_override_keeps_siblings(self, tmp_path):
        cfg = make(tmp_path, tokenizer={"train": {"epochs": 3}})
        assert cfg.section("tokenizer")["train"]["epochs"] == 3
        assert cfg.section("tokenizer")["train"]["warmup_epochs"] == DEFAULTS["tokenizer"]["train"]["warmup_epochs"]
        assert cfg.section("tokenizer")["width"] == DEFAULTS["tokenizer"]["width"]

    def test_defaults_not_mutated(self, tmp_path):
        before = DEFAULTS["tokenizer"]["train"]["epochs"]
        make(tmp_path, tokenizer={"train": {"epochs": 99}})
        assert DEFAULTS["tokenizer"]["train"]["epochs"] == before


class TestValidation:
    def test_output_dir_required(self, tmp_path):
        with pytest.raises(ConfigError, match="output_dir"):
            RunConfig(path=tmp_path / "c.yaml", raw={"datasets": MINIMAL["datasets"]})

    def test_datasets_required(self, tmp_path):
        with pytest.raises(ConfigError, match="datasets"):
            RunConfig(path=tmp_path / "c.yaml", raw={"output_dir": "run"})

    def test_unknown_generator(self, tmp_path):
        bad = {"heat": {**MINIMAL["datasets"]["heat"], "generator": "navier"}}
        with pytest.raises(ConfigError, match="generator"):
            make(tmp_path, datasets=bad)

    @pytest.mark.parametrize("field,value", [("height", 17), ("width", 20), ("frames", 15)])
    def test_divisibility(self, tmp_path, field, value):
        bad = {"heat": {**MINIMAL["datasets"]["heat"], field: value}}
        with pytest.raises(ConfigError):
            make(tmp_path, datasets=bad)

    def test_missing_resolution_key(self, tmp_path):
        entry = dict(MINIMAL["datasets"]["heat"])
        del entry["height"]
        with pytest.raises(ConfigError, match="height"):
            make(tmp_path, datasets={"heat": entry})

    def test_trajectories_required(self, tmp_path):
        entry = {**MINIMAL["datasets"]["heat"], "trajectories": {}}
        with pytest.raises(ConfigError, match="trajectories"):
            make(tmp_path, datasets={"heat": entry})

    def test_unknown_split(self, tmp_path):
        entry = {**MINIMAL["datasets"]["heat"], "trajectories": {"train": 1, "holdout": 1}}
        with pytest.raises(ConfigError, match="holdout"):
            make(tmp_path, datasets={"heat": entry})

    def test_negative_count(self, tmp_path):
        entry = {**MINIMAL["datasets"]["heat"], "trajectories": {"train": -1}}
        with pytest.raises(ConfigError, match="negative"):
            make(tmp_path, datasets={"heat": entry})

    def test_absent_splits_filled_with_zero(self, tmp_path):
        entry = {**MINIMAL["datasets"]["heat"], "trajectories": {"train": 2}}
        cfg = make(tmp_path, datasets={"heat": entry})
        assert cfg.datasets["heat"]["trajectories"] == {"train": 2, "val": 0, "test": 0}

    def test_params_default_empty(self, tmp_path):
        entry = dict(MINIMAL["datasets"]["heat"])
        del entry["params"]
        cfg = make(tmp_path, datasets={"heat": entry})
        assert cfg.datasets["heat"]["params"] == {}


class TestModeAndInit:
    def test_bad_mode(self, tmp_path):
        with pytest.raises(ConfigError, match="mode"):
            make(tmp_path, mode="dual-task")

    def test_single_task_unknown_dataset(self, tmp_path):
        with pytest.raises(ConfigError, match="gray_scott"):
            make(tmp_path, mode="single-task:gray_scott")

    def test_scope(self, tmp_path):
        assert make(tmp_path).datasets_in_scope() == ["heat"]
        assert make(tmp_path, mode="single-task:heat").datasets_in_scope() == ["heat"]

    def test_bad_init(self, tmp_path):
        with pytest.raises(ConfigError, match="init"):
            make(tmp_path, init="warm-start")

    def test_init_checkpoint_must_exist(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            make(tmp_path, init="import-checkpoint:missing_dir")

    def test_init_checkpoint_resolved_relative_to_config(self, tmp_path):
        (tmp_path / "base").mkdir()
        cfg = make(tmp_path, init="import-checkpoint:base")
        assert cfg.init_checkpoint == (tmp_path / "base").resolve()
        assert make(tmp_path).init_checkpoint is None

    @pytest.mark.parametrize("value,expect", [("on", True), ("off", False), (True, True), (False, False)])
    def test_refinement_values(self, tmp_path, value, expect):
        assert make(tmp_path, refinement=value).refinement is expect

    def test_refinement_invalid(self, tmp_path):
        with pytest.raises(ConfigError, match="refinement"):
            make(tmp_path, refinement="maybe")


class TestFinetuneSection:
    def entry(self):
        return {
            "generator": "advect_diffuse",
            "height": 16,
            "width": 16,
            "frames": 16,
            "trajectories": {"train": 1, "val": 1, "test": 1},
            "params": {"dt": 0.5},
        }

    def test_exactly_one_dataset(self, tmp_path):
        ft = {"dataset": {"a": self.entry(), "b": self.entry()}}
        with pytest.raises(ConfigError, match="exactly one"):
            make(tmp_path, finetune=ft)

    def test_name_collision_with_base(self, tmp_path):
        with pytest.raises(ConfigError, match="already"):
            make(tmp_path, finetune={"dataset": {"heat": self.entry()}})

    def test_entry_validated(self, tmp_path):
        bad = {**self.entry(), "height": 17}
        with pytest.raises(ConfigError):
            make(tmp_path, finetune={"dataset": {"advect_diffuse": bad}})

    def test_budget_defaults(self, tmp_path):
        cfg = make(tmp_path, finetune={"dataset": {"advect_diffuse": self.entry()}})
        assert cfg.section("finetune")["tokenizer_epochs"] == 100
        assert cfg.section("finetune")["ar_iterations"] == 1000


class TestPathsAndHash:
    def test_output_dir_relative_to_config(self, tmp_path):
        cfg = make(tmp_path)
        assert cfg.output_dir == (tmp_path / "run").resolve()

    def test_hash_ignores_output_dir(self, tmp_path):
        a = make(tmp_path)
        b = make(tmp_path, output_dir="elsewhere")
        assert a.hash == b.hash

    def test_hash_sees_seed(self, tmp_path):
        assert make(tmp_path).hash != make(tmp_path, seed=5).hash

    def test_with_overrides_merges_and_revalidates(self, tmp_path):
        cfg = make(tmp_path)
        arm = cfg.with_overrides({"mode": "single-task:heat", "ar": {"width": 96}})
        assert arm.mode == "single-task:heat"
        assert arm.section("ar")["width"] == 96
        assert arm.section("ar")["layers"] == cfg.section("ar")["layers"]
        assert cfg.mode == "multi-task"
        with pytest.raises(ConfigError):
            cfg.with_overrides({"mode": "single-task:nope"})


class TestLoadRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = write_and_load(tmp_path, MINIMAL)
        assert cfg.datasets_in_scope() == ["heat"]
        assert cfg.output_dir == (tmp_path / "run").resolve()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.yaml")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("datasets: [unclosed\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_non_mapping_document(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

import json
import threading
import time

import pytest

from physix.errors import DataError, PairingError
from physix.pipeline.artifacts import (
    KEY_CHARS,
    ArtifactStore,
    ExperimentRecord,
    StageTimer,
    stage_key,
)


def record(stage="train", **kw):
    defaults = dict(stage=stage, config_hash="c" * 8, seed=3)
    defaults.update(kw)
    return ExperimentRecord(**defaults)


class TestStageKey:
    def test_stable(self):
        a = stage_key("tok", {"width": 8}, inputs={"data": "abc"}, seed=1)
        b = stage_key("tok", {"width": 8}, inputs={"data": "abc"}, seed=1)
        assert a == b

    def test_each_argument_matters(self):
        base = stage_key("tok", {"width": 8}, inputs={"data": "abc"}, seed=1)
        assert stage_key("ar", {"width": 8}, inputs={"data": "abc"}, seed=1) != base
        assert stage_key("tok", {"width": 9}, inputs={"data": "abc"}, seed=1) != base
        assert stage_key("tok", {"width": 8}, inputs={"data": "xyz"}, seed=1) != base
        assert stage_key("tok", {"width": 8}, inputs={"data": "abc"}, seed=2) != base

    def test_inputs_default_empty(self):
        assert stage_key("tok", {}) == stage_key("tok", {}, inputs={})

    def test_dict_order_irrelevant(self):
        a = stage_key("tok", {"a": 1, "b": 2})
        b = stage_key("tok", {"b": 2, "a": 1})
        assert a == b


class TestExperimentRecord:
    def test_round_trip(self):
        rec = record(
            inputs={"data": "h1"},
            outputs={"model": "h2"},
            metrics={"loss": 0.5},
            wall_seconds=1.5,
            status="cached",
        )
        assert ExperimentRecord.from_dict(rec.to_dict()) == rec

    def test_defaults(self):
        rec = record()
        assert rec.inputs == {} and rec.outputs == {} and rec.metrics == {}
        assert rec.status == "ok"


class TestArtifactStore:
    def test_stage_dir_layout(self, tmp_path):
        store = ArtifactStore(tmp_path / "run")
        d = store.stage_dir("tokenizer", "abcdef0123456789")
        assert d == tmp_path / "run" / "tokenizer" / ("h" + "abcdef0123456789"[:KEY_CHARS])

    def test_append_and_read_back(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record(stage="a"))
        store.append(record(stage="b", outputs={"m": "h1"}))
        recs = store.records()
        assert [r.stage for r in recs] == ["a", "b"]
        assert store.records(stage="b")[0].outputs == {"m": "h1"}

    def test_empty_ledger(self, tmp_path):
        assert ArtifactStore(tmp_path).records() == []

    def test_append_only(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record(stage="a"))
        first = store.ledger_path.read_text()
        store.append(record(stage="b"))
        assert store.ledger_path.read_text().startswith(first)

    def test_corrupt_line_raises(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record())
        with open(store.ledger_path, "a") as f:
            f.write("{not json\n")
        with pytest.raises(DataError, match="corrupt"):
            store.records()

    def test_known_output_hashes_strings_only(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record(outputs={"model": "hash-a", "count": 3}))
        assert store.known_output_hashes() == {"hash-a"}

    def test_verify_recorded_empty_ledger_passes(self, tmp_path):
        ArtifactStore(tmp_path).verify_recorded("tokenizer", "whatever")

    def test_verify_recorded_known_hash_passes(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record(outputs={"tokenizer": "hash-a"}))
        store.verify_recorded("tokenizer", "hash-a")

    def test_verify_recorded_foreign_hash_rejected(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.append(record(outputs={"tokenizer": "hash-a"}))
        with pytest.raises(PairingError, match="ledger"):
            store.verify_recorded("tokenizer", "hash-b")

    def test_concurrent_appends_all_land(self, tmp_path):
        store = ArtifactStore(tmp_path)

        def worker(i):
            store.append(record(stage=f"s{i}"))

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        lines = store.ledger_path.read_text().splitlines()
        assert len(lines) == 16
        for line in lines:
            json.loads(line)
        assert {r.stage for r in store.records()} == {f"s{i}" for i in range(16)}


def test_stage_timer_measures_elapsed():
    with StageTimer() as t:
        time.sleep(0.01)
    assert t.elapsed >= 0.005

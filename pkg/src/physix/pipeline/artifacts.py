"""Content-addressed artifact store and the append-only run ledger.

Every stage writes its outputs under ``<root>/<stage>/h<key>`` where the
key is a hash of the stage config plus the content hashes of consumed
upstream artifacts. Identical work lands in identical directories, so
re-runs reuse finished artifacts instead of mutating them. Each run
appends one ExperimentRecord to ``ledger.jsonl`` under a file lock.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock

from ..archive import config_hash
from ..errors import DataError, PairingError

KEY_CHARS = 12


def stage_key(stage: str, section: dict, inputs: dict | None = None, seed=None) -> str:
    return config_hash(
        {"stage": stage, "section": section, "inputs": dict(inputs or {}), "seed": seed}
    )


@dataclass
class ExperimentRecord:
    stage: str
    config_hash: str
    seed: int
    inputs: dict = field(default_factory=dict)  # name -> upstream content hash
    outputs: dict = field(default_factory=dict)  # name -> content hash or relative path
    metrics: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    status: str = "ok"

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "metrics": dict(self.metrics),
            "wall_seconds": self.wall_seconds,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(
            stage=d["stage"],
            config_hash=d["config_hash"],
            seed=int(d["seed"]),
            inputs=dict(d.get("inputs", {})),
            outputs=dict(d.get("outputs", {})),
            metrics=dict(d.get("metrics", {})),
            wall_seconds=float(d.get("wall_seconds", 0.0)),
            status=d.get("status", "ok"),
        )


class ArtifactStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def ledger_path(self) -> Path:
        return self.root / "ledger.jsonl"

    def stage_dir(self, stage: str, key: str) -> Path:
        return self.root / stage / f"h{key[:KEY_CHARS]}"

    def append(self, record: ExperimentRecord) -> None:
        lock = FileLock(str(self.root / "ledger.lock"))
        line = json.dumps(record.to_dict(), sort_keys=True)
        with lock:
            with open(self.ledger_path, "a") as f:
                f.write(line + "\n")

    def records(self, stage: str | None = None) -> list:
        if not self.ledger_path.exists():
            return []
        out = []
        for line in self.ledger_path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                rec = ExperimentRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"corrupt ledger line in {self.ledger_path}: {e}") from e
            if stage is None or rec.stage == stage:
                out.append(rec)
        return out

    def known_output_hashes(self) -> set:
        hashes = set()
        for rec in self.records():
            hashes.update(v for v in rec.outputs.values() if isinstance(v, str))
        return hashes

    def verify_recorded(self, name: str, content_hash: str) -> None:
        """Refuse artifacts the ledger never saw produced."""
        known = self.known_output_hashes()
        if known and content_hash not in known:
            raise PairingError(
                f"{name} checkpoint {content_hash[:KEY_CHARS]} does not appear in the "
                f"run ledger at {self.ledger_path}"
            )


class StageTimer:
    def __enter__(self):
        self._t0 = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.monotonic() - self._t0
        return False

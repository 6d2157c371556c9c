"""Evaluation report container and deterministic renderings.

A report holds per-(dataset, field, bucket) statistics, per-lead error
curves, and bookkeeping about skipped windows and excluded channels.
All output formats are pure functions of the content, with stable
ordering and no timestamps, so identical runs produce identical bytes.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from math import fsum

from ..errors import DataError
from .vrmse import average_rank, rank_table


@dataclass(frozen=True)
class BucketScore:
    dataset: str
    field: str
    bucket: tuple  # (first_lead, last_lead), inclusive
    mean: float
    count: int
    ci_half: float

    def __post_init__(self):
        object.__setattr__(self, "bucket", tuple(int(v) for v in self.bucket))
        if self.ci_half < 0:
            raise DataError("CI half-width cannot be negative")
        if self.count < 1:
            raise DataError("a bucket score needs at least one sample")


@dataclass
class EvalReport:
    label: str = ""
    entries: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)  # dataset -> field -> [[lead, value], ...]
    skipped: dict = field(default_factory=dict)  # dataset -> windows skipped
    excluded: dict = field(default_factory=dict)  # dataset -> constant field names

    @property
    def datasets(self) -> list:
        return sorted({e.dataset for e in self.entries})

    def fields_for(self, dataset: str) -> list:
        return sorted({e.field for e in self.entries if e.dataset == dataset})

    def score(self, dataset: str, fieldname: str, bucket) -> BucketScore:
        bucket = tuple(bucket)
        for e in self.entries:
            if (e.dataset, e.field, e.bucket) == (dataset, fieldname, bucket):
                return e
        raise DataError(f"no score for ({dataset!r}, {fieldname!r}, {bucket})")

    def field_average(self, dataset: str, bucket) -> float:
        """Mean VRMSE over the included fields of one dataset."""
        bucket = tuple(bucket)
        vals = [e.mean for e in self.entries if e.dataset == dataset and e.bucket == bucket]
        if not vals:
            raise DataError(f"no entries for dataset {dataset!r} bucket {bucket}")
        return fsum(vals) / len(vals)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "entries": [
                {
                    "dataset": e.dataset,
                    "field": e.field,
                    "bucket": list(e.bucket),
                    "mean": e.mean,
                    "count": e.count,
                    "ci_half": e.ci_half,
                }
                for e in sorted(self.entries, key=lambda e: (e.dataset, e.field, e.bucket))
            ],
            "curves": {
                d: {f: [[int(l), float(v)] for l, v in pts] for f, pts in sorted(fs.items())}
                for d, fs in sorted(self.curves.items())
            },
            "skipped": dict(sorted(self.skipped.items())),
            "excluded": {d: sorted(v) for d, v in sorted(self.excluded.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            label=d.get("label", ""),
            entries=[
                BucketScore(
                    dataset=e["dataset"],
                    field=e["field"],
                    bucket=tuple(e["bucket"]),
                    mean=float(e["mean"]),
                    count=int(e["count"]),
                    ci_half=float(e["ci_half"]),
                )
                for e in d.get("entries", [])
            ],
            curves={
                ds: {f: [(int(l), float(v)) for l, v in pts] for f, pts in fs.items()}
                for ds, fs in d.get("curves", {}).items()
            },
            skipped={k: int(v) for k, v in d.get("skipped", {}).items()},
            excluded={k: list(v) for k, v in d.get("excluded", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        lines = []
        if self.label:
            lines.append(f"model: {self.label}")
        header = f"{'dataset':<24} {'field':<16} {'lead':>7} {'vrmse':>12} {'ci95':>10} {'n':>6}"
        lines.append(header)
        lines.append("-" * len(header))
        for e in sorted(self.entries, key=lambda e: (e.dataset, e.field, e.bucket)):
            lead = f"{e.bucket[0]}" if e.bucket[0] == e.bucket[1] else f"{e.bucket[0]}:{e.bucket[1]}"
            lines.append(
                f"{e.dataset:<24} {e.field:<16} {lead:>7} {e.mean:>12.4f} "
                f"{'+/- ' + format(e.ci_half, '.4f'):>10} {e.count:>6}"
            )
        for d in self.datasets:
            buckets = sorted({e.bucket for e in self.entries if e.dataset == d})
            avgs = ", ".join(
                f"{b[0]}:{b[1]}={self.field_average(d, b):.4f}" for b in buckets
            )
            lines.append(f"{d}: field-averaged VRMSE {avgs}")
        for d, n in sorted(self.skipped.items()):
            if n:
                lines.append(f"{d}: skipped {n} windows")
        for d, names in sorted(self.excluded.items()):
            if names:
                lines.append(f"{d}: excluded constant fields {', '.join(sorted(names))}")
        return "\n".join(lines) + "\n"

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "field", "lead", "vrmse"])
        for d, fs in sorted(self.curves.items()):
            for f, pts in sorted(fs.items()):
                for lead, val in pts:
                    w.writerow([d, f, int(lead), f"{val:.6g}"])
        return buf.getvalue()


def rank_reports(reports, bucket=(1, 1)) -> dict:
    """Average rank per report label from field-averaged VRMSE.

    Every report must cover the same datasets for the given bucket.
    """
    table = {}
    for rep in reports:
        if not rep.label:
            raise DataError("ranking needs a label on every report")
        if rep.label in table:
            raise DataError(f"duplicate report label {rep.label!r}")
        table[rep.label] = {d: rep.field_average(d, bucket) for d in rep.datasets}
    return average_rank(table)


__all__ = ["BucketScore", "EvalReport", "rank_reports", "rank_table"]

"""Benchmark evaluation drivers.

Two protocols: next-frame scoring on random sliding windows, and
long-horizon scoring of one rollout per trajectory started from the
beginning of the simulation, with per-frame errors pooled into lead-time
buckets. Both talk to the model through a plain callable

    predict(context: (k, C, H, W) array, dataset: str, horizon: int)
        -> (horizon, C, H, W) array

in raw physical units, so any predictor (a trained stack, a persistence
baseline, an oracle) plugs in the same way. VRMSE is unchanged by
per-channel affine rescaling, so scoring raw units matches scoring in
normalized space.
"""

from math import fsum

import numpy as np

from ..determinism import derive_seed
from ..errors import ConfigError, DataError
from ..fields.types import TEMPORAL_FACTOR
from .report import BucketScore, EvalReport
from .vrmse import MetricConfig, confidence_interval, exclude_constant_channels, vrmse


def persistence(context, dataset, horizon):
    """Baseline predictor: repeat the last context frame."""
    context = np.asarray(context)
    return np.repeat(context[-1][None], int(horizon), axis=0)


def bucket_for_lead(lead: int, buckets):
    for b in buckets:
        if b[0] <= lead <= b[1]:
            return tuple(b)
    return None


def _group_by_dataset(sequences):
    groups = {}
    for seq in sequences:
        groups.setdefault(seq.spec.name, []).append(seq)
    return groups


def _channel_mask(group, cfg):
    mask = exclude_constant_channels([s.data for s in group], cfg.constant_threshold)
    channels = group[0].spec.channels
    included = [(c, ch) for c, (ch, keep) in enumerate(zip(channels, mask)) if keep]
    excluded = [ch for ch, keep in zip(channels, mask) if not keep]
    return included, excluded


def _finish(report, dataset, per_field_scores, bucket):
    for fieldname, scores in per_field_scores.items():
        if not scores:
            continue
        if len(scores) >= 2:
            mean, half = confidence_interval(scores)
        else:
            mean, half = scores[0], 0.0
        report.entries.append(
            BucketScore(
                dataset=dataset,
                field=fieldname,
                bucket=bucket,
                mean=mean,
                count=len(scores),
                ci_half=half,
            )
        )


def next_frame_eval(
    predict,
    sequences,
    windows: int = 8,
    context_frames: int = 8,
    cfg: MetricConfig = MetricConfig(),
    seed: int = 0,
    label: str = "",
) -> EvalReport:
    """Score the first predicted frame of random sliding windows.

    Each window asks the predictor for one latent block
    (``TEMPORAL_FACTOR`` frames) and scores only the first of them
    against truth. Windows that do not fit in their trajectory are
    skipped and counted. Deterministic for a given seed and a
    deterministic predictor.
    """
    if windows < 1 or context_frames < 1:
        raise ConfigError("need at least one window and one context frame")
    if not sequences:
        raise DataError("no test trajectories")
    report = EvalReport(label=label)
    for dataset, group in sorted(_group_by_dataset(sequences).items()):
        included, excluded = _channel_mask(group, cfg)
        report.excluded[dataset] = excluded
        rng = np.random.default_rng(derive_seed(seed, "next-frame", dataset))
        scores = {ch: [] for _, ch in included}
        skipped = 0
        for _ in range(windows):
            seq = group[int(rng.integers(len(group)))]
            n_starts = seq.num_frames - context_frames
            if n_starts < 1:
                skipped += 1
                continue
            start = int(rng.integers(n_starts))
            context = seq.data[start : start + context_frames]
            pred = np.asarray(predict(context, dataset, TEMPORAL_FACTOR))
            truth = seq.data[start + context_frames]
            for c, ch in included:
                scores[ch].append(vrmse(pred[0, c], truth[c], cfg.epsilon))
        report.skipped[dataset] = skipped
        _finish(report, dataset, scores, bucket=(1, 1))
    return report


def long_horizon_eval(
    predict,
    sequences,
    context_frames: int = 8,
    cfg: MetricConfig = MetricConfig(),
    max_lead=None,
    label: str = "",
) -> EvalReport:
    """One rollout per trajectory from its start, bucketed by lead time.

    Lead ``i`` (1-based) is the i-th frame after the context block.
    Per-frame scores are averaged per lead into the report curves and
    pooled into the configured buckets. Trajectories shorter than
    ``context_frames + 1`` are excluded and counted under ``skipped``.
    """
    if not sequences:
        raise DataError("no test trajectories")
    if max_lead is None:
        max_lead = cfg.buckets[-1][1]
    report = EvalReport(label=label)
    for dataset, group in sorted(_group_by_dataset(sequences).items()):
        included, excluded = _channel_mask(group, cfg)
        report.excluded[dataset] = excluded
        bucket_scores = {}
        lead_scores = {}
        skipped = 0
        for seq in group:
            horizon = min(seq.num_frames - context_frames, max_lead)
            if horizon < 1:
                skipped += 1
                continue
            request = -(-horizon // TEMPORAL_FACTOR) * TEMPORAL_FACTOR
            pred = np.asarray(predict(seq.data[:context_frames], dataset, request))[:horizon]
            for i in range(1, horizon + 1):
                truth = seq.data[context_frames + i - 1]
                bucket = bucket_for_lead(i, cfg.buckets)
                for c, ch in included:
                    s = vrmse(pred[i - 1, c], truth[c], cfg.epsilon)
                    lead_scores.setdefault(ch, {}).setdefault(i, []).append(s)
                    if bucket is not None:
                        bucket_scores.setdefault((ch, bucket), []).append(s)
        report.skipped[dataset] = skipped
        for ch, by_lead in sorted(lead_scores.items()):
            pts = [(lead, fsum(v) / len(v)) for lead, v in sorted(by_lead.items())]
            report.curves.setdefault(dataset, {})[ch] = pts
        buckets_present = sorted({b for _, b in bucket_scores})
        for bucket in buckets_present:
            per_field = {
                ch: bucket_scores[(ch, bucket)]
                for _, ch in included
                if (ch, bucket) in bucket_scores
            }
            _finish(report, dataset, per_field, bucket=bucket)
    return report

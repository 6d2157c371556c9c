from .protocols import bucket_for_lead, long_horizon_eval, next_frame_eval, persistence
from .report import BucketScore, EvalReport, rank_reports
from .vrmse import (
    MetricConfig,
    average_rank,
    channel_vrmse,
    confidence_interval,
    exclude_constant_channels,
    rank_table,
    vrmse,
)

__all__ = [
    "BucketScore",
    "EvalReport",
    "MetricConfig",
    "average_rank",
    "bucket_for_lead",
    "channel_vrmse",
    "confidence_interval",
    "exclude_constant_channels",
    "long_horizon_eval",
    "next_frame_eval",
    "persistence",
    "rank_reports",
    "rank_table",
    "vrmse",
]

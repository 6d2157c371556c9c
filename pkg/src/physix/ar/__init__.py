from .model import ARConfig, ARTransformer, TokenSequence, ar_loss, next_token_logits
from .rollout import RolloutRequest, rollout, sample_token
from .rope import axis_angle_table, axis_split, raster_positions, rope3d_apply
from .train import ARTrainConfig, ARTrainResult, train_ar, validation_loss_ar

__all__ = [
    "ARConfig",
    "ARTrainConfig",
    "ARTrainResult",
    "ARTransformer",
    "RolloutRequest",
    "TokenSequence",
    "ar_loss",
    "axis_angle_table",
    "axis_split",
    "next_token_logits",
    "raster_positions",
    "rollout",
    "rope3d_apply",
    "sample_token",
    "train_ar",
    "validation_loss_ar",
]

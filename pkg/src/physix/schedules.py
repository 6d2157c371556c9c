"""Learning-rate schedule: linear warmup followed by cosine decay to zero."""

import math


def warmup_cosine(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """LR at ``step`` in [0, total_steps].

    Linear ramp 0 -> base_lr over ``warmup_steps``, then cosine decay
    reaching exactly 0 at ``total_steps`` (no floor).
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("warmup_steps must lie inside the schedule")
    step = min(step, total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr

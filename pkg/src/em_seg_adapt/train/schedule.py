"""
Polynomial learning-rate decay over the adaptation horizon.
"""

import torch

from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import TrainConfig


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """``lr0 · (1 − iteration/total_iters)^poly_power`` for 0 ≤ iteration ≤ total_iters."""
    if not 0 <= iteration <= cfg.total_iters:
        raise ConfigError(
            f"Iteration {iteration} outside the schedule range [0, {cfg.total_iters}]"
        )
    if cfg.total_iters == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - iteration / cfg.total_iters) ** cfg.poly_power


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr

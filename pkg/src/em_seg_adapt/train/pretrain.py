"""
Supervised pretraining of the segmentation path on labelled source crops.
"""

import logging

import torch

from em_seg_adapt.data.sampling import sample_source
from em_seg_adapt.losses import seg_loss
from em_seg_adapt.models import DataError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import TrainConfig
from em_seg_adapt.train.schedule import set_lr
from em_seg_adapt.train.state import TrainState
from em_seg_adapt.train.state import check_finite

logger = logging.getLogger(__name__)


def pretrain_ge(
    state: TrainState,
    source: ImageStack,
    cfg: TrainConfig,
    patch: int = 64,
    augment: bool = False,
) -> TrainState:
    """Run ``cfg.pretrain_iters`` Adam steps on seg_loss at constant ``lr0``.

    Only the encoder and segmentation decoder receive gradients; the
    generator optimiser skips the reconstruction decoder because its
    gradients stay ``None``.
    """
    if not source.has_labels:
        raise DataError("Pretraining needs a labelled source stack")
    optimizer = state.optimizers["generator"]
    set_lr(optimizer, cfg.lr0)
    state.bundle.train()

    for i in range(cfg.pretrain_iters):
        x, y = sample_source(source, patch, cfg.batch_size, state.rng, augment)
        x_s, y_s = torch.from_numpy(x), torch.from_numpy(y)
        p_s = state.bundle.ge(x_s).p
        check_finite(i, "seg", p_s)
        loss = seg_loss(p_s, y_s)
        check_finite(i, "seg", loss)
        value = float(loss.detach())

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        state.pretrain_history.append((i, cfg.lr0, value))
        if cfg.log_every and (i % cfg.log_every == 0 or i == cfg.pretrain_iters - 1):
            logger.info("pretrain %5d/%d  seg=%.5f", i, cfg.pretrain_iters, value)

    optimizer.zero_grad(set_to_none=True)
    state.pretrained = True
    return state

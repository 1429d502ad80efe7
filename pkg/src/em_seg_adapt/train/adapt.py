"""
One alternation of adversarial adaptation: discriminator phase, then generator phase.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass

import torch

from em_seg_adapt.losses import LossValues
from em_seg_adapt.losses import disc_loss
from em_seg_adapt.losses import discriminator_objective
from em_seg_adapt.losses import gen_adv_loss
from em_seg_adapt.losses import generator_objective
from em_seg_adapt.losses import rec_loss
from em_seg_adapt.losses import seg_loss
from em_seg_adapt.models import AblationFlags
from em_seg_adapt.models import HistoryRow
from em_seg_adapt.models import TrainBatch
from em_seg_adapt.models import TrainConfig
from em_seg_adapt.nets import NetworkBundle
from em_seg_adapt.nets import forward_disc
from em_seg_adapt.train.schedule import poly_lr
from em_seg_adapt.train.schedule import set_lr
from em_seg_adapt.train.state import TrainState
from em_seg_adapt.train.state import check_finite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchTensors:
    x_s: torch.Tensor
    y_s: torch.Tensor
    x_t: torch.Tensor

    @classmethod
    def from_batch(cls, batch: TrainBatch) -> "BatchTensors":
        return cls(
            x_s=torch.from_numpy(batch.x_s),
            y_s=torch.from_numpy(batch.y_s),
            x_t=torch.from_numpy(batch.x_t),
        )


def enabled_discriminators(flags: AblationFlags) -> list[str]:
    return [name for name, on in (("d_pred", flags.de_pred), ("d_feat", flags.de_feat)) if on]


@contextmanager
def frozen(bundle: NetworkBundle, names: list[str]):
    """Temporarily stop gradient accumulation into the named components."""
    params = [p for name in names for p in bundle.component(name).parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, saved, strict=True):
            p.requires_grad_(flag)


# ---------------------------------------------------------------------------
# Phase D
# ---------------------------------------------------------------------------


def discriminator_phase(
    state: TrainState, tensors: BatchTensors, cfg: TrainConfig
) -> tuple[float, float]:
    """Adam step(s) on the discriminator objective with detached generator outputs.

    Returns the last ``(d_pred, d_feat)`` loss values; disabled terms are 0.0.
    """
    active = enabled_discriminators(cfg.ablation)
    if not active:
        return 0.0, 0.0

    bundle = state.bundle
    with torch.no_grad():
        out_s = bundle.ge(tensors.x_s)
        out_t = bundle.ge(tensors.x_t)
    for term, tensor in (("p_s", out_s.p), ("p_t", out_t.p), ("f_s", out_s.f), ("f_t", out_t.f)):
        check_finite(state.iter, term, tensor)

    d_pred_value = d_feat_value = 0.0
    for _ in range(cfg.disc_steps):
        d_pred_term: torch.Tensor | float = 0.0
        d_feat_term: torch.Tensor | float = 0.0
        if "d_pred" in active:
            d_pred_term = disc_loss(
                forward_disc(bundle.d_pred, out_s.p), forward_disc(bundle.d_pred, out_t.p)
            )
            check_finite(state.iter, "d_pred", d_pred_term)
            d_pred_value = float(d_pred_term.detach())
        if "d_feat" in active:
            d_feat_term = disc_loss(
                forward_disc(bundle.d_feat, out_s.f), forward_disc(bundle.d_feat, out_t.f)
            )
            check_finite(state.iter, "d_feat", d_feat_term)
            d_feat_value = float(d_feat_term.detach())

        objective = discriminator_objective(d_pred_term, d_feat_term, cfg.weights)
        for name in active:
            state.optimizers[name].zero_grad(set_to_none=True)
        objective.backward()
        for name in active:
            state.optimizers[name].step()
            state.disc_updates[name] += 1
    logger.debug("Phase D updated %s (%d step(s))", ", ".join(active), cfg.disc_steps)
    return d_pred_value, d_feat_value


# ---------------------------------------------------------------------------
# Phase G
# ---------------------------------------------------------------------------


def generator_phase(state: TrainState, tensors: BatchTensors, cfg: TrainConfig) -> LossValues:
    """Adam step on the generator objective; discriminators are frozen but differentiated through.

    Terms disabled by the ablation flags are neither computed nor logged (0.0).
    """
    bundle = state.bundle
    flags = cfg.ablation
    lv = LossValues()

    with frozen(bundle, ["d_pred", "d_feat"]):
        out_s = bundle.ge(tensors.x_s)
        check_finite(state.iter, "seg", out_s.p)
        lv.seg = seg_loss(out_s.p, tensors.y_s)
        check_finite(state.iter, "seg", lv.seg)

        if flags.en:
            lv.rec = rec_loss(
                tensors.x_s, bundle.ae(tensors.x_s), tensors.x_t, bundle.ae(tensors.x_t)
            )
            check_finite(state.iter, "rec", lv.rec)

        if flags.de_pred or flags.de_feat:
            out_t = bundle.ge(tensors.x_t)
            if flags.de_pred:
                lv.g_pred_loss = gen_adv_loss(forward_disc(bundle.d_pred, out_t.p))
                check_finite(state.iter, "g_pred", lv.g_pred_loss)
            if flags.de_feat:
                lv.g_feat_loss = gen_adv_loss(forward_disc(bundle.d_feat, out_t.f))
                check_finite(state.iter, "g_feat", lv.g_feat_loss)

        objective = generator_objective(lv, cfg.weights)
        optimizer = state.optimizers["generator"]
        optimizer.zero_grad(set_to_none=True)
        objective.backward()
        optimizer.step()
    return lv.as_floats()


def adapt_step(state: TrainState, batch: TrainBatch, cfg: TrainConfig) -> TrainState:
    """One full alternation at ``poly_lr(state.iter)``; appends a history row and bumps ``iter``."""
    lr = poly_lr(state.iter, cfg)
    for optimizer in state.optimizers.values():
        set_lr(optimizer, lr)
    state.bundle.train()

    tensors = BatchTensors.from_batch(batch)
    d_pred_value, d_feat_value = discriminator_phase(state, tensors, cfg)
    lv = generator_phase(state, tensors, cfg)

    state.history.append(
        HistoryRow(
            iter=state.iter,
            lr=lr,
            seg=lv.seg,
            rec=lv.rec,
            d_pred=d_pred_value,
            d_feat=d_feat_value,
            g_pred=lv.g_pred_loss,
            g_feat=lv.g_feat_loss,
        )
    )
    state.iter += 1
    return state

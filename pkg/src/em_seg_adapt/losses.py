"""
Segmentation, reconstruction and adversarial losses and the two composite objectives.

Adversarial losses take discriminator logits and use the fused
log-sigmoid form. Source is the discriminator's positive class; the
generator terms use inverted labels (target scored as source), so every
objective here is minimised.
"""

from dataclasses import dataclass
from dataclasses import fields

import torch
import torch.nn.functional as F

from em_seg_adapt.models import AdaptError
from em_seg_adapt.models import LossWeights
from em_seg_adapt.models import ShapeError

PROB_EPS = 1e-7

Scalar = torch.Tensor | float


@dataclass
class LossValues:
    """One forward pass worth of loss terms; tensors while training, floats once logged."""

    seg: Scalar = 0.0
    rec: Scalar = 0.0
    d_pred_loss: Scalar = 0.0
    d_feat_loss: Scalar = 0.0
    g_pred_loss: Scalar = 0.0
    g_feat_loss: Scalar = 0.0

    def as_floats(self) -> "LossValues":
        return LossValues(**{f.name: float(getattr(self, f.name)) for f in fields(self)})


def _require_same_shape(name: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _require_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise AdaptError(f"{name}: input contains NaN or Inf")


def seg_loss(p_s: torch.Tensor, y_s: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of source predictions, clamped to [ε, 1−ε]."""
    _require_same_shape("seg_loss", p_s, y_s)
    _require_finite("seg_loss", p_s)
    p = p_s.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return F.binary_cross_entropy(p, y_s.to(p.dtype))


def rec_loss(
    x_s: torch.Tensor, x_hat_s: torch.Tensor, x_t: torch.Tensor, x_hat_t: torch.Tensor
) -> torch.Tensor:
    """Per-pixel MSE of the source pair plus that of the target pair."""
    _require_same_shape("rec_loss (source)", x_s, x_hat_s)
    _require_same_shape("rec_loss (target)", x_t, x_hat_t)
    return F.mse_loss(x_hat_s, x_s) + F.mse_loss(x_hat_t, x_t)


def disc_loss(score_s: torch.Tensor, score_t: torch.Tensor) -> torch.Tensor:
    """−[mean log σ(score_s) + mean log(1 − σ(score_t))]."""
    _require_finite("disc_loss", score_s)
    _require_finite("disc_loss", score_t)
    real = F.binary_cross_entropy_with_logits(score_s, torch.ones_like(score_s))
    fake = F.binary_cross_entropy_with_logits(score_t, torch.zeros_like(score_t))
    return real + fake


def gen_adv_loss(score_t: torch.Tensor) -> torch.Tensor:
    """−mean log σ(score_t): target outputs pushed toward the source class."""
    _require_finite("gen_adv_loss", score_t)
    return F.binary_cross_entropy_with_logits(score_t, torch.ones_like(score_t))


def generator_objective(lv: LossValues, w: LossWeights) -> Scalar:
    return (
        lv.seg
        + w.lambda_rec * lv.rec
        + w.lambda_feat * lv.g_feat_loss
        + w.lambda_pred * lv.g_pred_loss
    )


def discriminator_objective(d_pred_loss: Scalar, d_feat_loss: Scalar, w: LossWeights) -> Scalar:
    return w.lambda_feat * d_feat_loss + w.lambda_pred * d_pred_loss

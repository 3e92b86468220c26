"""Loss terms: patch-GAN adversarial losses, cycle consistency, hybrid
segmentation loss, and the weighted total objective.

Adversarial objectives are implemented as minimized negatives with the
non-saturating generator form; the minimax fixed point is unchanged. The
``least_squares`` variant treats raw discriminator outputs directly.
"""

from __future__ import annotations

from enum import Enum

import torch
import torch.nn.functional as F

from .core import GEN_TERMS, LossRecord, LossWeights
from .errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch

DICE_EPS = 1e-7


class GanLossPhase(Enum):
    DISCRIMINATOR = "discriminator_phase"
    GENERATOR = "generator_phase"


def adv_loss(
    real_logits,
    fake_logits,
    phase: GanLossPhase,
    form: str = "log_loss",
) -> torch.Tensor:
    """Adversarial loss over patch maps, averaged over batch and positions.

    ``real_logits`` is unused (may be None) in the generator phase.
    """
    if form == "log_loss":
        # softplus keeps -log sigmoid exact and stable at large |logit|
        if phase is GanLossPhase.DISCRIMINATOR:
            loss = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
        else:
            loss = F.softplus(-fake_logits).mean()
    elif form == "least_squares":
        if phase is GanLossPhase.DISCRIMINATOR:
            loss = ((real_logits - 1.0) ** 2).mean() + (fake_logits**2).mean()
        else:
            loss = ((fake_logits - 1.0) ** 2).mean()
    else:
        raise ValueError(f"unknown gan loss form {form!r}")
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"adversarial loss ({form}, {phase.value}) is not finite")
    return loss


def cycle_loss(recon_s, x_s, recon_t, x_t) -> torch.Tensor:
    """Mean absolute reconstruction error, summed over both cycle directions."""
    if recon_s.shape != x_s.shape or recon_t.shape != x_t.shape:
        raise ShapeMismatch(
            f"cycle pairs must match: {tuple(recon_s.shape)} vs {tuple(x_s.shape)}, "
            f"{tuple(recon_t.shape)} vs {tuple(x_t.shape)}"
        )
    return (recon_s - x_s).abs().mean() + (recon_t - x_t).abs().mean()


def seg_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Pixel-mean cross-entropy plus soft multi-class Dice (background included).

    ``logits`` is B x K x H x W, ``labels`` is B x H x W with values in [0, K).
    """
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(
            f"labels must lie in [0, {k}), got [{labels.min()}, {labels.max()}]"
        )
    ce = F.cross_entropy(logits, labels)

    probs = F.softmax(logits, dim=1)
    onehot = F.one_hot(labels, k).permute(0, 3, 1, 2).to(probs.dtype)
    inter = (probs * onehot).sum(dim=(0, 2, 3))
    denom = probs.sum(dim=(0, 2, 3)) + onehot.sum(dim=(0, 2, 3))
    dice_score = (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
    return ce + (1.0 - dice_score.mean())


def total_objective(record: LossRecord, weights: LossWeights) -> float:
    """Weighted sum of the generator-phase terms; absent terms contribute 0."""
    total = 0.0
    for name in GEN_TERMS:
        value = getattr(record, name)
        if value is None:
            continue
        total += getattr(weights, name) * value
    if not torch.isfinite(torch.tensor(total)):
        raise NonFiniteLoss(f"total objective is not finite: {total}")
    return float(total)

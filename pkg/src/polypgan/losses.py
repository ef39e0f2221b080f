"""Segmentation and adversarial training objectives.

All losses accept a ground-truth mask and a predicted probability map of
identical shape. Tensors with 4+ dimensions are treated as batched with the
batch along dim 0; anything smaller is a single image. Region sums (for the
IoU/Dice families) are taken per image and the per-image losses are then
averaged, so loss magnitudes do not depend on batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

LOSS_COMBOS = (
    "wiou",
    "bce_only",
    "dice_only",
    "bwiou",
    "biou",
    "bdice",
    "3loss_a",
    "3loss_b",
    "3loss_c",
)

# Fixed weightings for the named three-term combos.
_THREE_TERM_WEIGHTS = {
    "3loss_a": (0.4, 0.3, 0.3),
    "3loss_b": (0.3, 0.4, 0.3),
    "3loss_c": (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
}


@dataclass
class LossConfig:
    """Selects the generator's segmentation objective and its constants.

    ``lambda1/2/3`` weight the (BCE, IoU-family, Dice) terms of the
    three-term combos and are pinned for ``3loss_a`` / ``3loss_b``;
    passing conflicting values raises. ``alpha`` is the foreground weight
    of the weighted IoU, ``eps`` the stabilizer inside the region ratios,
    ``eps_clip`` the probability clip applied before every logarithm, and
    ``lambda_adv`` the coupling weight of the adversarial term in the
    generator's total objective (0 recovers pure supervised training).
    """

    combo: str = "3loss_a"
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    alpha: float = 0.7
    eps: float = 1e-6
    lambda_adv: float = 0.1
    eps_clip: float = 1e-7

    def __post_init__(self):
        if self.combo not in LOSS_COMBOS:
            raise ValueError(
                f"unknown loss combo {self.combo!r}; expected one of {LOSS_COMBOS}"
            )
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if not 0.0 < self.eps_clip < 0.5:
            raise ValueError("eps_clip must lie in (0, 0.5)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        pinned = _THREE_TERM_WEIGHTS.get(self.combo)
        if pinned is not None:
            given = (self.lambda1, self.lambda2, self.lambda3)
            for g, p in zip(given, pinned):
                if g is not None and abs(g - p) > 1e-12:
                    raise ValueError(
                        f"combo {self.combo!r} pins (lambda1, lambda2, lambda3) "
                        f"= {pinned}, got {given}"
                    )
            self.lambda1, self.lambda2, self.lambda3 = pinned


def _flatten_per_image(m_true: Tensor, m_pred: Tensor) -> tuple[Tensor, Tensor]:
    """Validate shapes and flatten to (batch, pixels)."""
    if m_true.shape != m_pred.shape:
        raise ValueError(
            f"mask shape mismatch: true {tuple(m_true.shape)} vs "
            f"pred {tuple(m_pred.shape)}"
        )
    if m_true.dim() >= 4:
        return m_true.reshape(m_true.shape[0], -1), m_pred.reshape(m_pred.shape[0], -1)
    return m_true.reshape(1, -1), m_pred.reshape(1, -1)


def bce_loss(m_true: Tensor, m_pred: Tensor, eps_clip: float = 1e-7) -> Tensor:
    """Pixel-wise binary cross-entropy, mean over all pixels.

    Predictions are clipped to [eps_clip, 1 - eps_clip] before the logs so
    saturated sigmoid outputs cannot produce infinities.
    """
    t, p = _flatten_per_image(m_true, m_pred)
    p = p.clamp(eps_clip, 1.0 - eps_clip)
    per_pixel = -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p))
    return per_pixel.mean()


def dice_loss(m_true: Tensor, m_pred: Tensor, eps: float = 1e-6) -> Tensor:
    """1 - soft Dice overlap, per image then averaged."""
    t, p = _flatten_per_image(m_true, m_pred)
    inter = (t * p).sum(dim=1)
    dice = (2.0 * inter + eps) / (t.sum(dim=1) + p.sum(dim=1) + eps)
    return (1.0 - dice).mean()


def _iou_fg(t: Tensor, p: Tensor, eps: float) -> Tensor:
    inter = (t * p).sum(dim=1)
    union = t.sum(dim=1) + p.sum(dim=1) - inter
    return (inter + eps) / (union + eps)


def _iou_bg(t: Tensor, p: Tensor, eps: float) -> Tensor:
    a = ((1.0 - t) * (1.0 - p)).sum(dim=1)
    b = (1.0 - t).sum(dim=1)
    c = (1.0 - p).sum(dim=1)
    return (a + eps) / (b + c - a + eps)


def plain_iou_loss(m_true: Tensor, m_pred: Tensor, eps: float = 1e-6) -> Tensor:
    """1 - foreground soft IoU, per image then averaged."""
    t, p = _flatten_per_image(m_true, m_pred)
    return (1.0 - _iou_fg(t, p, eps)).mean()


def weighted_iou_loss(
    m_true: Tensor, m_pred: Tensor, alpha: float = 0.7, eps: float = 1e-6
) -> Tensor:
    """1 - (alpha * IoU_fg + (1 - alpha) * IoU_bg), per image then averaged.

    ``alpha`` balances foreground against background overlap; alpha=1
    degenerates to the plain foreground IoU loss.
    """
    t, p = _flatten_per_image(m_true, m_pred)
    wiou = alpha * _iou_fg(t, p, eps) + (1.0 - alpha) * _iou_bg(t, p, eps)
    return (1.0 - wiou).mean()


def generator_seg_loss(m_true: Tensor, m_pred: Tensor, cfg: LossConfig) -> Tensor:
    """Segmentation part of the generator objective for the selected combo.

    Three-term combos weight (BCE, WIoU, Dice); ``3loss_c`` swaps in the
    plain IoU and averages the three. Two-term combos use equal 0.5/0.5
    weights; single-term combos reduce to that loss.
    """
    combo = cfg.combo
    if combo == "wiou":
        return weighted_iou_loss(m_true, m_pred, cfg.alpha, cfg.eps)
    if combo == "bce_only":
        return bce_loss(m_true, m_pred, cfg.eps_clip)
    if combo == "dice_only":
        return dice_loss(m_true, m_pred, cfg.eps)
    if combo == "bwiou":
        return 0.5 * bce_loss(m_true, m_pred, cfg.eps_clip) + 0.5 * weighted_iou_loss(
            m_true, m_pred, cfg.alpha, cfg.eps
        )
    if combo == "biou":
        return 0.5 * bce_loss(m_true, m_pred, cfg.eps_clip) + 0.5 * plain_iou_loss(
            m_true, m_pred, cfg.eps
        )
    if combo == "bdice":
        return 0.5 * bce_loss(m_true, m_pred, cfg.eps_clip) + 0.5 * dice_loss(
            m_true, m_pred, cfg.eps
        )
    if combo in ("3loss_a", "3loss_b"):
        l1, l2, l3 = cfg.lambda1, cfg.lambda2, cfg.lambda3
        return (
            l1 * bce_loss(m_true, m_pred, cfg.eps_clip)
            + l2 * weighted_iou_loss(m_true, m_pred, cfg.alpha, cfg.eps)
            + l3 * dice_loss(m_true, m_pred, cfg.eps)
        )
    if combo == "3loss_c":
        return (
            bce_loss(m_true, m_pred, cfg.eps_clip)
            + plain_iou_loss(m_true, m_pred, cfg.eps)
            + dice_loss(m_true, m_pred, cfg.eps)
        ) / 3.0
    raise ValueError(f"unknown loss combo {combo!r}")


def adversarial_generator_term(patch: Tensor, eps_clip: float = 1e-7) -> Tensor:
    """Non-saturating adversarial term: BCE of the patch map against ones.

    Small when the discriminator is fooled into scoring generated masks as
    real. The generator's total objective is
    ``generator_seg_loss + lambda_adv * adversarial_generator_term``.
    """
    p = patch.clamp(eps_clip, 1.0 - eps_clip)
    return (-torch.log(p)).mean()


def discriminator_loss(
    real_patch: Tensor, fake_patch: Tensor, eps_clip: float = 1e-7
) -> Tensor:
    """Mean of BCE(real patches vs ones) and BCE(fake patches vs zeros)."""
    r = real_patch.clamp(eps_clip, 1.0 - eps_clip)
    f = fake_patch.clamp(eps_clip, 1.0 - eps_clip)
    loss_real = (-torch.log(r)).mean()
    loss_fake = (-torch.log(1.0 - f)).mean()
    return 0.5 * (loss_real + loss_fake)

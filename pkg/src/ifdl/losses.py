"""Training objectives for both stages.

Every loss accepts a single sample or a leading batch dimension. Batch losses are
means over samples; the ``norm`` arguments override the denominator so a trainer
can divide micro-batch sums by the size of the whole accumulation window.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0
    lambda_det: float = 1.0

    def __post_init__(self):
        if min(self.lambda_bce, self.lambda_dice, self.lambda_det) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


@dataclass
class Stage1Loss:
    total: torch.Tensor
    bce: torch.Tensor
    dice: torch.Tensor
    ce: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("total", "bce", "dice", "ce")}


def _as_batch(logits: torch.Tensor, target) -> tuple[torch.Tensor, torch.Tensor]:
    target = torch.as_tensor(target, device=logits.device).to(logits.dtype)
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    if logits.dim() == 2:
        logits, target = logits.unsqueeze(0), target.unsqueeze(0)
    return logits.flatten(1), target.flatten(1)


def bce_per_sample(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean pixel BCE per sample in the stable form max(z,0) - z*t + log(1 + exp(-|z|))."""
    z, t = _as_batch(logits, target)
    per_pixel = z.clamp(min=0) - z * t + torch.log1p(torch.exp(-z.abs()))
    return per_pixel.mean(1)


def bce_loss(logits: torch.Tensor, target) -> torch.Tensor:
    return bce_per_sample(logits, target).mean()


def dice_per_sample(logits: torch.Tensor, target, smoothing: float = 1.0) -> torch.Tensor:
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    z, t = _as_batch(logits, target)
    p = torch.sigmoid(z)
    return 1 - (2 * (p * t).sum(1) + smoothing) / (p.sum(1) + t.sum(1) + smoothing)


def dice_loss(logits: torch.Tensor, target, smoothing: float = 1.0) -> torch.Tensor:
    """Soft Dice on sigmoid probabilities, smoothed in numerator and denominator."""
    return dice_per_sample(logits, target, smoothing).mean()


def dice_from_probs(p: torch.Tensor, t: torch.Tensor, smoothing: float = 1.0) -> torch.Tensor:
    p, t = p.flatten(), t.flatten().to(p.dtype)
    return 1 - (2 * (p * t).sum() + smoothing) / (p.sum() + t.sum() + smoothing)


def ce_per_sample(logits: torch.Tensor, label) -> torch.Tensor:
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    label = torch.as_tensor(label, device=logits.device).long().reshape(-1)
    if label.numel() != logits.shape[0]:
        raise ValueError(f"{label.numel()} labels for {logits.shape[0]} logit rows")
    k = logits.shape[-1]
    if (label < 0).any() or (label >= k).any():
        raise ValueError(f"label out of range for {k} classes: {label.tolist()}")
    return torch.logsumexp(logits, -1) - logits.gather(-1, label[:, None])[:, 0]


def ce_loss(logits: torch.Tensor, label) -> torch.Tensor:
    """-log softmax(logits)[label], averaged over a batch."""
    return ce_per_sample(logits, label).mean()


def stage1_loss(
    mask_logits: torch.Tensor,
    mask_target,
    class_logits: torch.Tensor,
    label,
    weights: LossWeights = LossWeights(),
    loc_weight: torch.Tensor | None = None,
    loc_norm: float | None = None,
    det_norm: float | None = None,
    smoothing: float = 1.0,
) -> Stage1Loss:
    """Weighted BCE + Dice + class CE.

    ``loc_weight`` (0/1 per sample) switches the localization terms off for samples
    without a localization target; those samples still contribute the CE term.
    """
    bce = bce_per_sample(mask_logits, mask_target)
    dice = dice_per_sample(mask_logits, mask_target, smoothing)
    ce = ce_per_sample(class_logits, label)
    if loc_weight is None:
        loc_weight = torch.ones_like(bce)
    loc_weight = torch.as_tensor(loc_weight, dtype=bce.dtype, device=bce.device).reshape(-1)
    if loc_norm is None:
        loc_norm = float(loc_weight.sum())
    if det_norm is None:
        det_norm = float(ce.numel())
    if loc_norm > 0:
        bce_term = (loc_weight * bce).sum() / loc_norm
        dice_term = (loc_weight * dice).sum() / loc_norm
    else:
        bce_term = dice_term = (bce * 0).sum()
    ce_term = ce.sum() / det_norm
    total = weights.lambda_bce * bce_term + weights.lambda_dice * dice_term + weights.lambda_det * ce_term
    return Stage1Loss(total=total, bce=bce_term, dice=dice_term, ce=ce_term)


def sequence_ce_loss(pred_logits: torch.Tensor, target_tokens, pad_id: int = 0, norm: float | None = None) -> torch.Tensor:
    """Mean token cross-entropy over non-pad target positions."""
    target = torch.as_tensor(target_tokens, device=pred_logits.device).long()
    if pred_logits.shape[:-1] != target.shape:
        raise ValueError(f"logits {tuple(pred_logits.shape)} do not match targets {tuple(target.shape)}")
    keep = target != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("target contains only padding; mean token loss is undefined")
    v = pred_logits.shape[-1]
    real = target[keep]
    if (real < 0).any() or (real >= v).any():
        raise ValueError(f"target token out of range for vocabulary of size {v}")
    logits = pred_logits[keep]
    nll = torch.logsumexp(logits, -1) - logits.gather(-1, real[:, None])[:, 0]
    return nll.sum() / (count if norm is None else norm)

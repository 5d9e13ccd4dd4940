"""Task losses.

Shadow detection uses class-balanced BCE; camouflage and polyp segmentation
use BCE plus soft IoU. Predictions are probabilities in [0, 1] and are
clamped to [eps, 1-eps] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ValidationError

LOSS_KINDS = ("balanced_bce", "bce_plus_iou")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce_plus_iou"
    iou_weight: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.iou_weight < 0:
            raise ValidationError(f"iou_weight must be >= 0, got {self.iou_weight}")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")


def _check_shapes(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {tuple(pred.shape)} != gt shape {tuple(gt.shape)}")


def bce_loss(pred: torch.Tensor, gt: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """Mean over pixels of -[g*log(p) + (1-g)*log(1-p)]."""
    _check_shapes(pred, gt)
    p = pred.clamp(epsilon, 1.0 - epsilon)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()


def balanced_bce_loss(pred: torch.Tensor, gt: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """Class-frequency-weighted BCE, per image.

    The positive term is weighted by the negative-pixel fraction and vice
    versa. When only one class is present the loss falls back to plain BCE
    on that class with weight 1.
    """
    _check_shapes(pred, gt)
    p = pred.clamp(epsilon, 1.0 - epsilon)
    n = gt.numel()
    n_pos = gt.sum()
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return bce_loss(pred, gt, epsilon)
    w_pos = n_neg / n
    w_neg = n_pos / n
    return -(w_pos * gt * torch.log(p) + w_neg * (1.0 - gt) * torch.log(1.0 - p)).mean()


def iou_loss(pred: torch.Tensor, gt: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """1 - soft IoU: 1 - (sum(p*g)+eps) / (sum(p)+sum(g)-sum(p*g)+eps)."""
    _check_shapes(pred, gt)
    inter = (pred * gt).sum()
    union = pred.sum() + gt.sum() - inter
    return 1.0 - (inter + epsilon) / (union + epsilon)


def task_loss(config: LossConfig, pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if config.kind == "balanced_bce":
        return balanced_bce_loss(pred, gt, config.epsilon)
    if config.kind == "bce_plus_iou":
        return bce_loss(pred, gt, config.epsilon) + config.iou_weight * iou_loss(
            pred, gt, config.epsilon
        )
    raise ValidationError(f"unknown loss kind {config.kind!r}")


def loss_for_task(task: str) -> LossConfig:
    """Default loss recipe per task."""
    if task == "shadow":
        return LossConfig(kind="balanced_bce")
    if task in ("camouflage", "polyp"):
        return LossConfig(kind="bce_plus_iou")
    raise ValidationError(f"unknown task {task!r}")

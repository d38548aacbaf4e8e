import logging
from typing import Callable, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.tensor_core import functional as F
from src.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

LossFn = Callable[[Tensor, np.ndarray], Tensor]


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["cross_entropy", "focal_dice"] = Field("cross_entropy", description="Training objective")
    focal_gamma: float = Field(2.0, ge=0, description="Focusing exponent of the focal term")
    dice_smooth: float = Field(1.0, gt=0, description="Additive smoothing of the soft Dice term")
    class_weights: Optional[List[float]] = Field(None, description="Per-class cross-entropy weights")

    @field_validator("class_weights")
    @classmethod
    def _non_negative(cls, weights: Optional[List[float]]) -> Optional[List[float]]:
        if weights is not None and any(w < 0 for w in weights):
            raise ValueError("class weights must be non-negative")
        return weights


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """[N,H,W] labels -> [N,K,H,W] float indicator"""
    return (labels[:, None] == np.arange(num_classes)[None, :, None, None]).astype(np.float64)


def cross_entropy(logits: Tensor, labels: np.ndarray, class_weights: Optional[List[float]] = None) -> Tensor:
    """Mean over pixels of -log softmax at the true class"""
    return F.cross_entropy(logits, labels, class_weights=class_weights)


def focal_loss(logits: Tensor, labels: np.ndarray, gamma: float = 2.0) -> Tensor:
    """Mean over pixels of -(1 - p_t)^gamma log p_t; equals cross-entropy at gamma 0"""
    labels = F.check_labels(logits.data, labels)
    target = Tensor(one_hot(labels, logits.shape[1]))
    log_pt = (F.log_softmax(logits, axis=1) * target).sum(axis=1)
    if gamma == 0:
        return -log_pt.mean()
    pt = (F.softmax(logits, axis=1) * target).sum(axis=1)
    return -(((1.0 - pt) ** gamma) * log_pt).mean()


def soft_dice_loss(logits: Tensor, labels: np.ndarray, smooth: float = 1.0) -> Tensor:
    """1 - mean over classes of (2 sum(p*y) + s) / (sum(p) + sum(y) + s), sums over the batch"""
    labels = F.check_labels(logits.data, labels)
    target = one_hot(labels, logits.shape[1])
    probs = F.softmax(logits, axis=1)
    intersection = (probs * Tensor(target)).sum(axis=(0, 2, 3))
    denominator = probs.sum(axis=(0, 2, 3)) + Tensor(target.sum(axis=(0, 2, 3)))
    dice = (intersection * 2.0 + smooth) / (denominator + smooth)
    return 1.0 - dice.mean()


def focal_dice(logits: Tensor, labels: np.ndarray, cfg: Optional[LossConfig] = None) -> Tensor:
    cfg = cfg or LossConfig(kind="focal_dice")
    return focal_loss(logits, labels, cfg.focal_gamma) + soft_dice_loss(logits, labels, cfg.dice_smooth)


def build_loss(cfg: LossConfig) -> LossFn:
    """Loss callable ``(logits, labels) -> scalar Tensor`` for ``cfg``"""
    if cfg.kind == "focal_dice":
        logger.info(f"Using focal+dice loss (gamma={cfg.focal_gamma}, smooth={cfg.dice_smooth})")
        return lambda logits, labels: focal_dice(logits, labels, cfg)
    logger.info("Using cross-entropy loss" + (" with class weights" if cfg.class_weights else ""))
    return lambda logits, labels: cross_entropy(logits, labels, cfg.class_weights)

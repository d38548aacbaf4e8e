import logging
import math
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from src.errors import ArgumentError, ShapeError
from src.metrics.report import EvalReport

logger = logging.getLogger(__name__)

AbsentPolicy = Literal["exclude", "perfect"]


def dice_per_class(pred: np.ndarray, gt: np.ndarray, k: int) -> Optional[float]:
    """2|P∩G| / (|P| + |G|) over pixels of class ``k``; ``None`` when ``k`` is in neither mask"""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    in_pred, in_gt = pred == k, gt == k
    total = int(in_pred.sum()) + int(in_gt.sum())
    if total == 0:
        return None
    return 2.0 * int(np.logical_and(in_pred, in_gt).sum()) / total


def _resolve(value: Optional[float], policy: AbsentPolicy) -> Optional[float]:
    if value is None and policy == "perfect":
        return 1.0
    return value


def per_image_mean_dsc(
    pred: np.ndarray, gt: np.ndarray, classes: Sequence[int], absent_policy: AbsentPolicy = "exclude"
) -> Optional[float]:
    scores = [_resolve(dice_per_class(pred, gt, k), absent_policy) for k in classes]
    present = [s for s in scores if s is not None]
    return math.fsum(present) / len(present) if present else None


def aggregate_dsc(
    samples: Sequence[Tuple[np.ndarray, np.ndarray]],
    classes: Sequence[int],
    class_names: Optional[Sequence[str]] = None,
    absent_policy: AbsentPolicy = "exclude",
) -> EvalReport:
    """Macro-averaged Dice over ``samples`` of (pred, gt) masks.

    A class's DSC is the mean over the images where it occurs in either mask; the mean DSC
    is the unweighted mean over classes that occur somewhere. Sums are exactly rounded, so
    the result does not depend on image order.

    Raises:
        ArgumentError: If ``samples`` or ``classes`` is empty
    """
    if not samples:
        raise ArgumentError("aggregate_dsc needs at least one (pred, gt) pair")
    if not classes:
        raise ArgumentError("aggregate_dsc needs at least one class")
    names = list(class_names) if class_names is not None else [str(k) for k in classes]
    if len(names) != len(classes):
        raise ArgumentError(f"{len(names)} class names for {len(classes)} classes")

    per_class: List[List[float]] = [[] for _ in classes]
    per_image: List[Optional[float]] = []
    for pred, gt in samples:
        scores = [_resolve(dice_per_class(pred, gt, k), absent_policy) for k in classes]
        for bucket, score in zip(per_class, scores):
            if score is not None:
                bucket.append(score)
        present = [s for s in scores if s is not None]
        per_image.append(math.fsum(present) / len(present) if present else None)

    per_class_dsc = {name: (math.fsum(b) / len(b) if b else None) for name, b in zip(names, per_class)}
    absent = [name for name, value in per_class_dsc.items() if value is None]
    if absent:
        logger.warning(f"Classes absent from all {len(samples)} images: {', '.join(absent)}")
    present_values = [v for v in per_class_dsc.values() if v is not None]
    mean_dsc = math.fsum(present_values) / len(present_values) if present_values else 0.0
    return EvalReport(
        per_class_dsc=per_class_dsc,
        mean_dsc=min(max(mean_dsc, 0.0), 1.0),
        n_images=len(samples),
        per_image_mean_dsc=per_image,
    )

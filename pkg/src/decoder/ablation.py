"""Decoder ablation grid: eleven rows mapping decoder switches, loss and augmentation to configs"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from src.decoder.spatial import KERNEL_SIZES, DecoderConfig
from src.errors import ArgumentError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy", "focal_dice")
ACTIVATION_KINDS = ("none", "relu", "gelu")

LOSS_LABELS = {"cross_entropy": "Cross Entropy", "focal_dice": "Focal+Dice"}
ACTIVATION_LABELS = {"none": "-", "relu": "ReLU", "gelu": "GeLU"}


@dataclass(frozen=True)
class AblationRow:
    conv: str
    batch_norm: bool
    activation: str
    extra_convs: Tuple[str, ...]
    loss: str
    augmentation: bool
    reported_dsc: Optional[float] = None

    def table_cells(self) -> Dict[str, str]:
        return {
            "Conv.": self.conv,
            "Batch Norm": "yes" if self.batch_norm else "no",
            "Activation": ACTIVATION_LABELS.get(self.activation, self.activation),
            "A. Conv.": ", ".join(self.extra_convs) if self.extra_convs else "--",
            "Loss Function": LOSS_LABELS.get(self.loss, self.loss),
            "Augmentation": "yes" if self.augmentation else "no",
        }


@dataclass(frozen=True)
class AblationPlan:
    """What a row configures: the decoder plus the loss and augmentation selectors for the trainer"""

    decoder: DecoderConfig
    loss_kind: str
    augmentation: bool


ABLATION_ROWS: Tuple[AblationRow, ...] = (
    AblationRow("1x1", False, "none", (), "cross_entropy", False, 51.11),
    AblationRow("1x1", True, "none", (), "cross_entropy", False, 57.18),
    AblationRow("1x1", True, "gelu", (), "cross_entropy", False, 66.13),
    AblationRow("1x1", True, "relu", (), "cross_entropy", False, 67.67),
    AblationRow("3x3", True, "relu", (), "cross_entropy", False, 65.01),
    AblationRow("1x1", True, "relu", ("1x1",), "cross_entropy", False, 67.69),
    AblationRow("1x1", True, "relu", ("1x1", "1x1"), "cross_entropy", False, 46.50),
    AblationRow("1x1", True, "relu", ("3x3",), "cross_entropy", False, 53.28),
    AblationRow("1x1", True, "relu", ("1x1", "3x3"), "cross_entropy", False, 81.89),
    AblationRow("1x1", True, "relu", ("1x1", "3x3"), "focal_dice", True, 45.78),
    AblationRow("1x1", True, "relu", ("1x1", "3x3"), "cross_entropy", True, 85.50),
)


def ablation_row(index: int) -> AblationRow:
    """Row ``index`` of the grid, 1-based"""
    if not 1 <= index <= len(ABLATION_ROWS):
        raise ArgumentError(f"ablation row must be in 1..{len(ABLATION_ROWS)}, got {index}")
    return ABLATION_ROWS[index - 1]


def build_ablation_decoder(row: AblationRow, base: Optional[DecoderConfig] = None) -> AblationPlan:
    """Realise ``row`` on top of ``base`` (which supplies width and class count).

    Raises:
        ArgumentError: If any field of the row has no decoder counterpart
    """
    if row.conv not in KERNEL_SIZES:
        raise ArgumentError(f"unsupported alignment conv {row.conv!r}")
    if row.activation not in ACTIVATION_KINDS:
        raise ArgumentError(f"unsupported activation {row.activation!r}")
    if len(row.extra_convs) > 2 or any(kind not in KERNEL_SIZES for kind in row.extra_convs):
        raise ArgumentError(f"unsupported refinement stack {row.extra_convs!r}")
    if row.loss not in LOSS_KINDS:
        raise ArgumentError(f"unsupported loss {row.loss!r}")

    base = base or DecoderConfig()
    decoder = base.model_copy(
        update={
            "align_kernel": KERNEL_SIZES[row.conv],
            "align_norm": "batch_norm" if row.batch_norm else "none",
            "align_activation": row.activation,
            "extra_convs": list(row.extra_convs),
        }
    )
    return AblationPlan(decoder=DecoderConfig.model_validate(decoder.model_dump()), loss_kind=row.loss, augmentation=row.augmentation)

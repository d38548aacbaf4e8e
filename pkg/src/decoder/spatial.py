"""Spatially preserving multi-scale decoder.

Pipeline: per-level channel alignment, coarse-to-fine fusion by bilinear upsampling and
channel concatenation, a convolutional refinement stack and a 1x1 prediction layer. Every
intermediate stays an [N,C,H,W] map.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.encoder.mit import FeaturePyramid
from src.tensor_core import functional as F
from src.tensor_core.module import BatchNorm2d, Conv2d, Module, ModuleList
from src.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

NormKind = Literal["none", "batch_norm"]
ActivationKind = Literal["none", "relu", "gelu"]
ConvKind = Literal["1x1", "3x3"]

KERNEL_SIZES = {"1x1": 1, "3x3": 3}


class DecoderConfig(BaseModel):
    """Decoder switches; the defaults are the full model"""

    model_config = ConfigDict(extra="forbid")

    unified_channels: int = Field(128, ge=1, description="Shared channel width C after alignment")
    align_norm: NormKind = Field("batch_norm", description="Norm after alignment and fusion convs")
    align_activation: ActivationKind = Field("relu", description="Activation after alignment and fusion convs")
    align_kernel: Literal[1, 3] = Field(1, description="Kernel of the alignment convs")
    extra_convs: List[ConvKind] = Field(
        default_factory=lambda: ["1x1", "3x3"], max_length=2, description="Refinement stack between fusion and prediction"
    )
    num_classes: int = Field(7, ge=2, description="Output classes including background")
    bn_eps: float = Field(1e-5, gt=0)
    bn_momentum: float = Field(0.1, gt=0, le=1)
    classifier_init_std: float = Field(0.01, gt=0, description="Truncated-normal std of the 1x1 classifier weights")


@dataclass
class DecoderState:
    aligned: List[Tensor]
    fused: Tensor
    refined: Tensor
    logits: Tensor


class ConvNormAct(Module):
    """Convolution (with bias), then optional batch norm, then optional activation"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, cfg: DecoderConfig, rng):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, padding=kernel // 2, rng=rng)
        self.norm = BatchNorm2d(out_channels, eps=cfg.bn_eps, momentum=cfg.bn_momentum) if cfg.align_norm == "batch_norm" else None
        self.activation = cfg.align_activation

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.norm is not None:
            y = self.norm(y)
        return F.activation(y, self.activation)


class SpatialDecoder(Module):
    """Decoder over a feature pyramid.

    Args:
        in_channels: Channels of the pyramid levels, finest first
        cfg: Decoder switches
        rng: Generator used for weight initialisation
    """

    def __init__(self, in_channels: Sequence[int], cfg: Optional[DecoderConfig] = None, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cfg = cfg or DecoderConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        width = self.cfg.unified_channels
        self.align = ModuleList([ConvNormAct(c, width, self.cfg.align_kernel, self.cfg, rng) for c in in_channels])
        # fuse[0] merges the second-coarsest level, fuse[-1] the finest
        self.fuse = ModuleList([ConvNormAct(2 * width, width, 1, self.cfg, rng) for _ in range(len(in_channels) - 1)])
        self.refine = ModuleList(
            [
                Conv2d(width, width, KERNEL_SIZES[kind], padding=KERNEL_SIZES[kind] // 2, rng=rng)
                for kind in self.cfg.extra_convs
            ]
        )
        self.classifier = Conv2d(width, self.cfg.num_classes, 1, rng=rng, init_std=self.cfg.classifier_init_std)

    def align_channels(self, pyramid: FeaturePyramid) -> List[Tensor]:
        levels = pyramid.validate().levels
        return [align(level) for align, level in zip(self.align, levels)]

    def _merge(self, aligned: Tensor, upsampled: Tensor) -> Tensor:
        return F.concat_channels(aligned, upsampled)

    def fuse_coarse_to_fine(self, aligned: Sequence[Tensor]) -> Tensor:
        x = aligned[-1]
        for fuse, target in zip(self.fuse, reversed(aligned[:-1])):
            upsampled = F.bilinear_upsample(x, target.shape[2], target.shape[3])
            x = fuse(self._merge(target, upsampled))
        return x

    def spatial_refine(self, x: Tensor) -> Tensor:
        for conv in self.refine:
            x = conv(x)
        return x

    def predict_logits(self, x: Tensor) -> Tensor:
        return self.classifier(x)

    def forward_with_state(self, pyramid: FeaturePyramid) -> DecoderState:
        aligned = self.align_channels(pyramid)
        fused = self.fuse_coarse_to_fine(aligned)
        refined = self.spatial_refine(fused)
        return DecoderState(aligned=aligned, fused=fused, refined=refined, logits=self.predict_logits(refined))

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        return self.forward_with_state(pyramid).logits

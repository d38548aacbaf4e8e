"""All-MLP baseline head: per-level token projection, upsampling, one fusion layer"""
import logging
from typing import Optional, Sequence

import numpy as np

from src.encoder.mit import FeaturePyramid
from src.tensor_core import functional as F
from src.tensor_core.module import BatchNorm2d, Conv2d, Linear, Module, ModuleList
from src.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)


class AllMLPDecoder(Module):
    """Flattens each pyramid level to tokens, projects them to ``embed_dim``, upsamples
    everything to the finest level and fuses the concatenation with a 1x1 conv + BN + ReLU
    before a 1x1 classifier.
    """

    def __init__(
        self,
        in_channels: Sequence[int],
        embed_dim: int,
        num_classes: int,
        rng: Optional[np.random.Generator] = None,
        bn_eps: float = 1e-5,
        bn_momentum: float = 0.1,
        init_std: float = 0.02,
        classifier_init_std: float = 0.01,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.proj = ModuleList([Linear(c, embed_dim, init_std=init_std, rng=rng) for c in in_channels])
        self.fuse = Conv2d(len(in_channels) * embed_dim, embed_dim, 1, bias=False, rng=rng)
        self.fuse_norm = BatchNorm2d(embed_dim, eps=bn_eps, momentum=bn_momentum)
        self.classifier = Conv2d(embed_dim, num_classes, 1, rng=rng, init_std=classifier_init_std)

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        levels = pyramid.validate().levels
        height, width = levels[0].shape[2:]
        projected = []
        for level, proj in zip(levels, self.proj):
            level_h, level_w = level.shape[2:]
            fmap = F.to_feature_map(proj(F.to_tokens(level)), level_h, level_w)
            projected.append(F.bilinear_upsample(fmap, height, width))
        fused = F.concat(projected[::-1], axis=1)
        fused = F.relu(self.fuse_norm(self.fuse(fused)))
        return self.classifier(fused)

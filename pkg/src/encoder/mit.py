"""Hierarchical Mix Transformer encoder producing a four-level feature pyramid"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ShapeError
from src.tensor_core import functional as F
from src.tensor_core.module import Conv2d, LayerNorm, Linear, Module, ModuleList
from src.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

NUM_STAGES = 4


class EncoderConfig(BaseModel):
    """Stage layout of the encoder; the defaults are the desk-scale micro profile"""

    model_config = ConfigDict(extra="forbid")

    stage_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 128], description="Channels C1..C4")
    stage_depths: List[int] = Field(default_factory=lambda: [1, 1, 1, 1], description="Transformer blocks per stage")
    attention_heads: List[int] = Field(default_factory=lambda: [1, 1, 2, 4], description="Heads per stage")
    sr_ratios: List[int] = Field(default_factory=lambda: [8, 4, 2, 1], description="Key/value spatial reduction")
    patch_kernels: List[int] = Field(default_factory=lambda: [7, 3, 3, 3], description="Patch-embedding kernels")
    patch_strides: List[int] = Field(default_factory=lambda: [4, 2, 2, 2], description="Patch-embedding strides")
    ffn_expansion: int = Field(4, ge=1, description="Hidden width multiplier of the Mix-FFN")
    in_channels: int = Field(3, ge=1, description="Image channels")
    layer_norm_eps: float = Field(1e-6, gt=0)
    init_std: float = Field(0.02, gt=0, description="Truncated-normal std of linear projections")

    @model_validator(mode="after")
    def _check_stages(self) -> "EncoderConfig":
        for name in ("stage_channels", "stage_depths", "attention_heads", "sr_ratios", "patch_kernels", "patch_strides"):
            values = getattr(self, name)
            if len(values) != NUM_STAGES:
                raise ValueError(f"{name} needs {NUM_STAGES} entries, got {len(values)}")
            if any(v < 1 for v in values):
                raise ValueError(f"{name} entries must be positive, got {values}")
        for channels, heads in zip(self.stage_channels, self.attention_heads):
            if channels % heads:
                raise ValueError(f"stage channels {channels} not divisible by {heads} heads")
        return self

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.patch_strides))

    @classmethod
    def micro(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def b5_shape(cls, depths: Tuple[int, ...] = (1, 1, 1, 1)) -> "EncoderConfig":
        """MiT-B5 channel and head layout; shallow by default so it can be instantiated in tests"""
        return cls(
            stage_channels=[64, 128, 320, 512],
            stage_depths=list(depths),
            attention_heads=[1, 2, 5, 8],
            sr_ratios=[8, 4, 2, 1],
        )


@dataclass
class FeaturePyramid:
    """Encoder outputs f1..f4 at 1/4, 1/8, 1/16 and 1/32 of the input resolution"""

    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    @property
    def levels(self) -> List[Tensor]:
        return [self.f1, self.f2, self.f3, self.f4]

    @property
    def channels(self) -> List[int]:
        return [level.shape[1] for level in self.levels]

    def validate(self) -> "FeaturePyramid":
        """Check the shared batch size and the halving resolution chain"""
        levels = self.levels
        for level in levels:
            if level.ndim != 4:
                raise ShapeError(f"pyramid levels must be [N,C,H,W], got {level.shape}")
            if level.shape[0] != levels[0].shape[0]:
                raise ShapeError("pyramid levels disagree on batch size")
        for finer, coarser in zip(levels, levels[1:]):
            if (coarser.shape[2] * 2, coarser.shape[3] * 2) != finer.shape[2:]:
                raise ShapeError(f"pyramid resolution chain broken: {finer.shape[2:]} -> {coarser.shape[2:]}")
        return self


class OverlapPatchEmbed(Module):
    """Strided convolution over overlapping patches, then layer norm over channels"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, eps: float, rng):
        super().__init__()
        self.stride = stride
        self.proj = Conv2d(in_channels, out_channels, kernel, stride=stride, padding=kernel // 2, rng=rng)
        self.norm = LayerNorm(out_channels, eps=eps)

    def forward(self, x: Tensor) -> Tensor:
        height, width = x.shape[2:]
        if height % self.stride or width % self.stride:
            raise ShapeError(f"input extent {height}x{width} not divisible by patch stride {self.stride}")
        y = self.proj(x)
        out_h, out_w = y.shape[2:]
        return F.to_feature_map(self.norm(F.to_tokens(y)), out_h, out_w)


class EfficientSelfAttention(Module):
    """Multi-head self-attention whose keys and values come from a spatially reduced grid"""

    def __init__(self, dim: int, heads: int, sr_ratio: int, eps: float, init_std: float, rng):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.sr_ratio = sr_ratio
        self.scale = (dim // heads) ** -0.5
        self.query = Linear(dim, dim, init_std=init_std, rng=rng)
        self.key = Linear(dim, dim, init_std=init_std, rng=rng)
        self.value = Linear(dim, dim, init_std=init_std, rng=rng)
        self.proj = Linear(dim, dim, init_std=init_std, rng=rng)
        if sr_ratio > 1:
            self.sr = Conv2d(dim, dim, sr_ratio, stride=sr_ratio, rng=rng)
            self.norm = LayerNorm(dim, eps=eps)

    def forward(self, x: Tensor, height: int, width: int) -> Tensor:
        n, length, dim = x.shape
        if length != height * width:
            raise ShapeError(f"token count {length} does not equal {height}x{width}")
        if height % self.sr_ratio or width % self.sr_ratio:
            raise ShapeError(f"sr_ratio {self.sr_ratio} does not divide {height}x{width}")
        head_dim = dim // self.heads

        q = self.query(x).reshape(n, length, self.heads, head_dim).permute(0, 2, 1, 3)
        if self.sr_ratio > 1:
            reduced = self.sr(F.to_feature_map(x, height, width))
            context = self.norm(F.to_tokens(reduced))
        else:
            context = x
        reduced_length = context.shape[1]
        k = self.key(context).reshape(n, reduced_length, self.heads, head_dim).permute(0, 2, 3, 1)
        v = self.value(context).reshape(n, reduced_length, self.heads, head_dim).permute(0, 2, 1, 3)

        attn = F.softmax((q @ k) * self.scale, axis=-1)
        out = (attn @ v).permute(0, 2, 1, 3).reshape(n, length, dim)
        return self.proj(out)


class MixFFN(Module):
    """Linear expand, 3x3 depthwise conv, GeLU, linear project"""

    def __init__(self, dim: int, expansion: int, init_std: float, rng):
        super().__init__()
        hidden = dim * expansion
        self.fc1 = Linear(dim, hidden, init_std=init_std, rng=rng)
        self.dwconv = Conv2d(hidden, hidden, 3, padding=1, groups=hidden, rng=rng)
        self.fc2 = Linear(hidden, dim, init_std=init_std, rng=rng)

    def forward(self, x: Tensor, height: int, width: int) -> Tensor:
        if x.shape[1] != height * width:
            raise ShapeError(f"token count {x.shape[1]} does not equal {height}x{width}")
        hidden = self.fc1(x)
        hidden = F.to_tokens(self.dwconv(F.to_feature_map(hidden, height, width)))
        return self.fc2(F.gelu(hidden))


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, sr_ratio: int, expansion: int, eps: float, init_std: float, rng):
        super().__init__()
        self.norm1 = LayerNorm(dim, eps=eps)
        self.attn = EfficientSelfAttention(dim, heads, sr_ratio, eps, init_std, rng)
        self.norm2 = LayerNorm(dim, eps=eps)
        self.ffn = MixFFN(dim, expansion, init_std, rng)

    def forward(self, x: Tensor, height: int, width: int) -> Tensor:
        x = x + self.attn(self.norm1(x), height, width)
        return x + self.ffn(self.norm2(x), height, width)


class EncoderStage(Module):
    def __init__(self, config: EncoderConfig, index: int, in_channels: int, rng):
        super().__init__()
        dim = config.stage_channels[index]
        self.patch_embed = OverlapPatchEmbed(
            in_channels,
            dim,
            config.patch_kernels[index],
            config.patch_strides[index],
            config.layer_norm_eps,
            rng,
        )
        self.blocks = ModuleList(
            [
                TransformerBlock(
                    dim,
                    config.attention_heads[index],
                    config.sr_ratios[index],
                    config.ffn_expansion,
                    config.layer_norm_eps,
                    config.init_std,
                    rng,
                )
                for _ in range(config.stage_depths[index])
            ]
        )
        self.norm = LayerNorm(dim, eps=config.layer_norm_eps)

    def forward(self, x: Tensor) -> Tensor:
        y = self.patch_embed(x)
        height, width = y.shape[2:]
        tokens = F.to_tokens(y)
        for block in self.blocks:
            tokens = block(tokens, height, width)
        return F.to_feature_map(self.norm(tokens), height, width)


class MixTransformer(Module):
    """Four-stage encoder.

    Args:
        config: Stage layout
        rng: Generator used for weight initialisation

    Example:
        >>> encoder = MixTransformer(EncoderConfig.micro(), np.random.default_rng(0))
        >>> pyramid = encoder(Tensor(np.zeros((1, 3, 64, 64))))
        >>> [level.shape[2] for level in pyramid.levels]
        [16, 8, 4, 2]
    """

    def __init__(self, config: Optional[EncoderConfig] = None, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.config = config or EncoderConfig.micro()
        rng = rng if rng is not None else np.random.default_rng(0)
        in_channels = [self.config.in_channels] + self.config.stage_channels[:-1]
        self.stages = ModuleList([EncoderStage(self.config, i, in_channels[i], rng) for i in range(NUM_STAGES)])

    def overlap_patch_embed(self, x: Tensor, stage: int) -> Tensor:
        """Patch embedding of stage ``stage`` (1-based) applied to ``x``"""
        return self.stages[stage - 1].patch_embed(x)

    def forward_stage(self, x: Tensor, stage: int) -> Tensor:
        return self.stages[stage - 1](x)

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 4 or image.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected [N,{self.config.in_channels},H,W] images, got {image.shape}")
        height, width = image.shape[2:]
        stride = self.config.total_stride
        if height % stride or width % stride:
            raise ShapeError(f"input extent {height}x{width} must be divisible by {stride}")
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(*levels)


def stage_resolutions(config: EncoderConfig, input_size: int) -> List[int]:
    sizes, size = [], input_size
    for stride in config.patch_strides:
        size = math.ceil(size / stride)
        sizes.append(size)
    return sizes

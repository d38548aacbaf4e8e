"""Parameter and FLOP counters, closed-form and measured.

FLOPs count 2 x multiply-accumulates of convolutions and matrix products only; bias,
normalisation, activation and interpolation are excluded. Counts are per image.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from src.decoder.allmlp import AllMLPDecoder
from src.decoder.spatial import KERNEL_SIZES, DecoderConfig, SpatialDecoder
from src.encoder.mit import EncoderConfig, FeaturePyramid, MixTransformer, stage_resolutions
from src.errors import ArgumentError
from src.segmentation.model import WoundFormer
from src.tensor_core.module import Module
from src.tensor_core.tensor import GradTape, Tensor

if TYPE_CHECKING:
    from src.config import RunConfig

logger = logging.getLogger(__name__)

SCOPES = ("decoder", "allmlp", "encoder", "model")


def conv_params(in_channels: int, out_channels: int, kernel: int, groups: int = 1, bias: bool = True) -> int:
    return out_channels * (in_channels // groups) * kernel * kernel + (out_channels if bias else 0)


def linear_params(in_features: int, out_features: int, bias: bool = True) -> int:
    return in_features * out_features + (out_features if bias else 0)


def conv_flops(in_channels: int, out_channels: int, kernel: int, out_h: int, out_w: int, groups: int = 1) -> int:
    return 2 * (in_channels // groups) * kernel * kernel * out_channels * out_h * out_w


# ----------------------------------------------------------------- analytic


def analytic_decoder_params(in_channels: Sequence[int], cfg: DecoderConfig) -> int:
    width = cfg.unified_channels
    norm = 2 * width if cfg.align_norm == "batch_norm" else 0
    total = sum(conv_params(c, width, cfg.align_kernel) + norm for c in in_channels)
    total += (len(in_channels) - 1) * (conv_params(2 * width, width, 1) + norm)
    total += sum(conv_params(width, width, KERNEL_SIZES[kind]) for kind in cfg.extra_convs)
    return total + conv_params(width, cfg.num_classes, 1)


def analytic_allmlp_params(in_channels: Sequence[int], embed_dim: int, num_classes: int) -> int:
    total = sum(linear_params(c, embed_dim) for c in in_channels)
    total += conv_params(len(in_channels) * embed_dim, embed_dim, 1, bias=False) + 2 * embed_dim
    return total + conv_params(embed_dim, num_classes, 1)


def analytic_encoder_params(cfg: EncoderConfig) -> int:
    total = 0
    previous = cfg.in_channels
    for i, dim in enumerate(cfg.stage_channels):
        hidden = dim * cfg.ffn_expansion
        total += conv_params(previous, dim, cfg.patch_kernels[i]) + 2 * dim
        block = 2 * dim  # norm1
        block += 4 * linear_params(dim, dim)  # query, key, value, proj
        if cfg.sr_ratios[i] > 1:
            block += conv_params(dim, dim, cfg.sr_ratios[i]) + 2 * dim
        block += 2 * dim  # norm2
        block += linear_params(dim, hidden) + conv_params(hidden, hidden, 3, groups=hidden) + linear_params(hidden, dim)
        total += cfg.stage_depths[i] * block + 2 * dim
        previous = dim
    return total


def analytic_decoder_flops(in_channels: Sequence[int], cfg: DecoderConfig, level_sizes: Sequence[int]) -> int:
    width = cfg.unified_channels
    total = sum(conv_flops(c, width, cfg.align_kernel, s, s) for c, s in zip(in_channels, level_sizes))
    total += sum(conv_flops(2 * width, width, 1, s, s) for s in level_sizes[:-1])
    finest = level_sizes[0]
    total += sum(conv_flops(width, width, KERNEL_SIZES[kind], finest, finest) for kind in cfg.extra_convs)
    return total + conv_flops(width, cfg.num_classes, 1, finest, finest)


def analytic_allmlp_flops(in_channels: Sequence[int], embed_dim: int, num_classes: int, level_sizes: Sequence[int]) -> int:
    finest = level_sizes[0]
    total = sum(2 * c * embed_dim * s * s for c, s in zip(in_channels, level_sizes))
    total += conv_flops(len(in_channels) * embed_dim, embed_dim, 1, finest, finest)
    return total + conv_flops(embed_dim, num_classes, 1, finest, finest)


def analytic_encoder_flops(cfg: EncoderConfig, input_size: int) -> int:
    total = 0
    previous = cfg.in_channels
    for i, (dim, size) in enumerate(zip(cfg.stage_channels, stage_resolutions(cfg, input_size))):
        hidden = dim * cfg.ffn_expansion
        tokens = size * size
        sr = cfg.sr_ratios[i]
        reduced = (size // sr) ** 2
        total += conv_flops(previous, dim, cfg.patch_kernels[i], size, size)
        block = 2 * dim * dim * tokens * 2  # query and output projections
        block += 2 * dim * dim * reduced * 2  # key and value projections
        if sr > 1:
            block += conv_flops(dim, dim, sr, size // sr, size // sr)
        block += 2 * tokens * reduced * dim * 2  # scores and weighted values
        block += 2 * dim * hidden * tokens * 2 + conv_flops(hidden, hidden, 3, size, size, groups=hidden)
        total += cfg.stage_depths[i] * block
        previous = dim
    return total


# ------------------------------------------------------------------ runtime


def count_runtime_params(module: Module) -> int:
    return module.num_parameters()


def flops_from_tape(tape: GradTape, batch_size: int) -> int:
    """Per-image FLOPs of the Conv2d and Matmul records on ``tape``"""
    total = 0
    for record in tape.records:
        out_size = record.output.size
        if record.name == "Conv2d":
            weight = record.inputs[1]
            total += 2 * int(np.prod(weight.shape[1:])) * out_size
        elif record.name == "Matmul":
            total += 2 * record.inputs[0].shape[-1] * out_size
    return total // batch_size


def count_runtime_flops(forward: Callable[[], Tensor], batch_size: int = 1) -> int:
    """Run ``forward`` under a fresh tape and count its recorded FLOPs"""
    with GradTape() as tape:
        forward()
    return flops_from_tape(tape, batch_size)


# ------------------------------------------------------------------- report


@dataclass
class CountReport:
    kind: str
    scope: str
    analytic: int
    runtime: int

    @property
    def matches(self) -> bool:
        return self.analytic == self.runtime

    def summary(self) -> str:
        status = "match" if self.matches else "MISMATCH"
        return f"{self.kind} [{self.scope}]: analytic={self.analytic:,} runtime={self.runtime:,} ({status})"


def _random_pyramid(channels: Sequence[int], level_sizes: Sequence[int], rng: np.random.Generator) -> FeaturePyramid:
    return FeaturePyramid(*[Tensor(rng.standard_normal((1, c, s, s))) for c, s in zip(channels, level_sizes)])


def count_report(kind: str, scope: str, config: "RunConfig") -> CountReport:
    """Analytic and measured params or FLOPs for one part of the configured model"""
    if kind not in ("params", "flops"):
        raise ArgumentError(f"count kind must be 'params' or 'flops', got {kind!r}")
    if scope not in SCOPES:
        raise ArgumentError(f"count scope must be one of {SCOPES}, got {scope!r}")

    rng = np.random.default_rng(config.train.seed)
    enc, dec, embed = config.encoder, config.decoder, config.model.allmlp_embed_dim
    channels = enc.stage_channels
    size = config.train.input_size
    level_sizes = stage_resolutions(enc, size)

    if scope == "decoder":
        module: Module = SpatialDecoder(channels, dec, rng)
        analytic_params = analytic_decoder_params(channels, dec)
        analytic_flops = analytic_decoder_flops(channels, dec, level_sizes)
    elif scope == "allmlp":
        module = AllMLPDecoder(channels, embed, dec.num_classes, rng)
        analytic_params = analytic_allmlp_params(channels, embed, dec.num_classes)
        analytic_flops = analytic_allmlp_flops(channels, embed, dec.num_classes, level_sizes)
    elif scope == "encoder":
        module = MixTransformer(enc, rng)
        analytic_params = analytic_encoder_params(enc)
        analytic_flops = analytic_encoder_flops(enc, size)
    else:
        module = WoundFormer(enc, dec, config.model, rng)
        head_params = (
            analytic_allmlp_params(channels, embed, dec.num_classes)
            if config.model.decoder_kind == "allmlp"
            else analytic_decoder_params(channels, dec)
        )
        head_flops = (
            analytic_allmlp_flops(channels, embed, dec.num_classes, level_sizes)
            if config.model.decoder_kind == "allmlp"
            else analytic_decoder_flops(channels, dec, level_sizes)
        )
        analytic_params = analytic_encoder_params(enc) + head_params
        analytic_flops = analytic_encoder_flops(enc, size) + head_flops

    if kind == "params":
        report = CountReport(kind, scope, analytic_params, count_runtime_params(module))
    else:
        if scope in ("decoder", "allmlp"):
            pyramid = _random_pyramid(channels, level_sizes, rng)
            runtime = count_runtime_flops(lambda: module(pyramid))
        else:
            image = Tensor(rng.uniform(size=(1, enc.in_channels, size, size)))
            runtime = count_runtime_flops(lambda: module(image))
        report = CountReport(kind, scope, analytic_flops, runtime)
    logger.info(report.summary())
    return report


"""Registered finite-difference checks for every differentiable building block"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.decoder.allmlp import AllMLPDecoder
from src.decoder.spatial import DecoderConfig, SpatialDecoder
from src.encoder.mit import EfficientSelfAttention, EncoderConfig, EncoderStage, FeaturePyramid, MixFFN
from src.objectives.losses import LossConfig, focal_dice
from src.tensor_core import functional as F
from src.tensor_core.gradcheck import GradcheckReport, gradcheck

logger = logging.getLogger(__name__)

Case = Tuple[Callable, List[np.ndarray], Optional[int]]

MICRO_PYRAMID = ((4, 8), (8, 4), (16, 2), (32, 1))


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _conv_case(rng, in_shape, weight_shape, stride=1, padding=0, groups=1) -> Case:
    inputs = [rng.standard_normal(in_shape), rng.standard_normal(weight_shape), rng.standard_normal(weight_shape[0])]
    return (lambda x, w, b: F.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)), inputs, None


def _batch_norm_train(rng) -> Case:
    def closure(x, gamma, beta):
        stats = (np.zeros(3), np.ones(3))
        return F.batch_norm(x, gamma, beta, stats, mode="train")

    return closure, [rng.standard_normal((2, 3, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)], None


def _batch_norm_eval(rng) -> Case:
    stats = (rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
    closure = lambda x, gamma, beta: F.batch_norm(x, gamma, beta, stats, mode="eval")  # noqa: E731
    return closure, [rng.standard_normal((2, 3, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)], None


def _layer_norm(rng) -> Case:
    inputs = [rng.standard_normal((2, 3, 6)), rng.uniform(0.5, 1.5, 6), rng.standard_normal(6)]
    return (lambda x, g, b: F.layer_norm(x, g, b)), inputs, None


def _attention(rng) -> Case:
    attn = EfficientSelfAttention(8, heads=2, sr_ratio=2, eps=1e-6, init_std=0.3, rng=rng)
    return (lambda x: attn(x, 4, 4)), [rng.standard_normal((1, 16, 8))], None


def _mix_ffn(rng) -> Case:
    ffn = MixFFN(8, expansion=4, init_std=0.3, rng=rng)
    return (lambda x: ffn(x, 2, 2)), [rng.standard_normal((1, 4, 8))], None


def _encoder_stage(rng) -> Case:
    stage = EncoderStage(EncoderConfig.micro(), 0, 3, rng)
    return (lambda x: stage(x)), [rng.uniform(size=(1, 3, 32, 32))], 48


def _pyramid_inputs(rng) -> List[np.ndarray]:
    return [rng.standard_normal((1, c, s, s)) for c, s in MICRO_PYRAMID]


def _spatial_decoder(rng) -> Case:
    cfg = DecoderConfig(unified_channels=8, num_classes=3, classifier_init_std=0.3)
    decoder = SpatialDecoder([c for c, _ in MICRO_PYRAMID], cfg, rng).eval()
    for _, buffer in decoder.named_buffers():
        buffer += rng.uniform(0.0, 0.5, buffer.shape)
    return (lambda *levels: decoder(FeaturePyramid(*levels))), _pyramid_inputs(rng), None


def _allmlp_decoder(rng) -> Case:
    decoder = AllMLPDecoder([c for c, _ in MICRO_PYRAMID], 8, 3, rng, init_std=0.3, classifier_init_std=0.3).eval()
    return (lambda *levels: decoder(FeaturePyramid(*levels))), _pyramid_inputs(rng), None


def _cross_entropy(rng) -> Case:
    labels = rng.integers(0, 3, size=(2, 2, 2))
    return (lambda logits: F.cross_entropy(logits, labels)), [rng.standard_normal((2, 3, 2, 2))], None


def _focal_dice(rng) -> Case:
    labels = rng.integers(0, 3, size=(2, 2, 2))
    cfg = LossConfig(kind="focal_dice")
    return (lambda logits: focal_dice(logits, labels, cfg)), [rng.standard_normal((2, 3, 2, 2))], None


CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "conv2d_1x1": lambda rng: _conv_case(rng, (1, 3, 4, 4), (2, 3, 1, 1)),
    "conv2d_3x3": lambda rng: _conv_case(rng, (1, 2, 5, 5), (3, 2, 3, 3), padding=1),
    "conv2d_7x7_stride4": lambda rng: _conv_case(rng, (1, 2, 8, 8), (2, 2, 7, 7), stride=4, padding=3),
    "conv2d_depthwise": lambda rng: _conv_case(rng, (1, 3, 5, 5), (3, 1, 3, 3), padding=1, groups=3),
    "batch_norm_train": _batch_norm_train,
    "batch_norm_eval": _batch_norm_eval,
    "relu": lambda rng: (F.relu, [_away_from_zero(rng.standard_normal((3, 4)))], None),
    "gelu": lambda rng: (F.gelu, [rng.standard_normal((3, 4))], None),
    "bilinear_upsample": lambda rng: ((lambda x: F.bilinear_upsample(x, 6, 7)), [rng.standard_normal((1, 2, 3, 3))], None),
    "concat_channels": lambda rng: (F.concat_channels, [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 1, 3, 3))], None),
    "matmul": lambda rng: (F.matmul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))], None),
    "softmax": lambda rng: (F.softmax, [rng.standard_normal((3, 5))], None),
    "log_softmax": lambda rng: (F.log_softmax, [rng.standard_normal((3, 5))], None),
    "layer_norm": _layer_norm,
    "attention": _attention,
    "mix_ffn": _mix_ffn,
    "encoder_stage": _encoder_stage,
    "spatial_decoder": _spatial_decoder,
    "allmlp_decoder": _allmlp_decoder,
    "cross_entropy": _cross_entropy,
    "focal_dice": _focal_dice,
}


def run_gradcheck_suite(
    tolerance: float = 1e-4, seed: int = 0, names: Optional[Sequence[str]] = None
) -> List[Tuple[str, GradcheckReport]]:
    """Run the registered checks (all of them unless ``names`` is given)"""
    selected = list(names) if names else list(CASES)
    unknown = [name for name in selected if name not in CASES]
    if unknown:
        raise KeyError(f"unknown gradcheck case(s): {unknown}")
    results = []
    for name in selected:
        rng = np.random.default_rng(seed)
        closure, inputs, max_checks = CASES[name](rng)
        report = gradcheck(closure, inputs, tolerance=tolerance, max_checks_per_input=max_checks, seed=seed)
        logger.info(f"gradcheck {name}: {report.summary()}")
        results.append((name, report))
    return results

"""Synthetic wound-like segmentation data.

Each sample paints one to four soft-edged, lobed elliptical tissue regions over a textured
skin background. Higher class indices are drawn less often (the rarest about twenty times
rarer than the commonest) and are painted first, so commoner tissue tends to sit on top.
A pixel takes a region's label once that region covers at least half of it, so the mask
boundary follows the visible colour edge.
The output is a pure function of the arguments.
"""
import colorsys
import logging
from typing import Dict, List, Literal, Tuple

import numpy as np

from src.data.dataset import SIZE_MULTIPLE, SegSample
from src.errors import ArgumentError
from src.tensor_core.functional import bilinear_weights

logger = logging.getLogger(__name__)

Style = Literal["standard", "boundary"]

SKIN_TONE = (0.87, 0.68, 0.55)
IMBALANCE = 20.0
MAX_REGIONS = 4
EDGE_SOFTNESS = 0.2
LABEL_ALPHA = 0.5
# rarest regions shrink to this fraction of the commonest
MIN_RADIUS_SCALE = 0.75
TEXTURE_GRID = 8

TISSUE_COLORS = [
    (0.78, 0.16, 0.18),  # granulation
    (0.86, 0.78, 0.38),  # slough
    (0.93, 0.90, 0.86),  # maceration
    (0.18, 0.12, 0.10),  # necrotic
    (0.55, 0.75, 0.90),  # bone
    (0.60, 0.85, 0.55),  # tendon
]

# semi-axis range, lobe amplitude, lobe count range
STYLES: Dict[str, Tuple[Tuple[float, float], float, Tuple[int, int]]] = {
    "standard": ((0.14, 0.30), 0.08, (3, 5)),
    "boundary": ((0.08, 0.18), 0.25, (5, 8)),
}


def class_frequencies(n_cls: int) -> np.ndarray:
    """Relative draw weights of the foreground classes 1..n_cls-1, geometric down to 1/20"""
    n_fg = n_cls - 1
    if n_fg == 1:
        return np.ones(1)
    return IMBALANCE ** (-np.arange(n_fg) / (n_fg - 1))


def class_color(k: int) -> Tuple[float, float, float]:
    if 1 <= k <= len(TISSUE_COLORS):
        return TISSUE_COLORS[k - 1]
    hue = (0.61803398875 * k) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.65, 0.8)


def _texture(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Smooth [size,size] noise: a coarse random grid upsampled bilinearly"""
    grid = rng.normal(0.0, amplitude, size=(TEXTURE_GRID, TEXTURE_GRID))
    weights = bilinear_weights(size, TEXTURE_GRID)
    return weights @ grid @ weights.T


def _region_alpha(rng: np.random.Generator, size: int, style: Style, radius_scale: float) -> np.ndarray:
    (axis_lo, axis_hi), amplitude, (lobes_lo, lobes_hi) = STYLES[style]
    a, b = rng.uniform(axis_lo, axis_hi, size=2) * radius_scale
    cy, cx = rng.uniform(0.25, 0.75, size=2)
    theta = rng.uniform(0.0, np.pi)
    lobes = rng.integers(lobes_lo, lobes_hi + 1)
    phase = rng.uniform(0.0, 2 * np.pi)

    coords = (np.arange(size) + 0.5) / size
    y, x = np.meshgrid(coords - cy, coords - cx, indexing="ij")
    u = x * np.cos(theta) + y * np.sin(theta)
    v = -x * np.sin(theta) + y * np.cos(theta)
    angle = np.arctan2(v, u)
    wobble = 1.0 + amplitude * np.sin(lobes * angle + phase)
    s = ((u / a) ** 2 + (v / b) ** 2) / wobble**2
    return np.clip((1.0 - s) / EDGE_SOFTNESS, 0.0, 1.0)


def synthetic_sample(seed: int, index: int, size: int, n_cls: int, style: Style = "standard") -> SegSample:
    rng = np.random.default_rng([seed, index])
    image = np.empty((3, size, size))
    for channel, tone in enumerate(SKIN_TONE):
        image[channel] = tone
    image += _texture(rng, size, 0.04)
    mask = np.zeros((size, size), dtype=np.int64)

    weights = class_frequencies(n_cls)
    n_regions = int(rng.integers(1, min(MAX_REGIONS, n_cls - 1) + 1))
    chosen = rng.choice(np.arange(1, n_cls), size=n_regions, replace=False, p=weights / weights.sum())
    for k in sorted(chosen.tolist(), reverse=True):
        radius_scale = MIN_RADIUS_SCALE + (1.0 - MIN_RADIUS_SCALE) * weights[k - 1]
        alpha = _region_alpha(rng, size, style, radius_scale)
        color = np.asarray(class_color(k)) + rng.normal(0.0, 0.03, size=3)
        texture = _texture(rng, size, 0.05)
        for channel in range(3):
            image[channel] = (1.0 - alpha) * image[channel] + alpha * (color[channel] + texture)
        mask[alpha >= LABEL_ALPHA] = k

    return SegSample(image=np.clip(image, 0.0, 1.0), mask=mask, source_id=f"synthetic-{seed}-{index:04d}")


def generate_synthetic_dataset(
    n: int, size: int, n_cls: int, seed: int, style: Style = "standard"
) -> List[SegSample]:
    """Generate ``n`` samples of ``size``x``size`` with ``n_cls`` classes (Background included).

    Raises:
        ArgumentError: If ``size`` is not a positive multiple of 32, ``n_cls`` < 2, or the style is unknown
    """
    if size <= 0 or size % SIZE_MULTIPLE:
        raise ArgumentError(f"synthetic size {size} must be a positive multiple of {SIZE_MULTIPLE}")
    if n_cls < 2:
        raise ArgumentError(f"need at least two classes, got {n_cls}")
    if style not in STYLES:
        raise ArgumentError(f"unknown synthetic style {style!r}")
    samples = [synthetic_sample(seed, i, size, n_cls, style) for i in range(n)]
    logger.info(f"Generated {n} synthetic {style} samples ({size}x{size}, {n_cls} classes, seed {seed})")
    return samples

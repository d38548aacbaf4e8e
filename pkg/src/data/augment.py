"""Paired image/mask augmentation.

Geometric transforms move image and mask together (the mask with nearest-neighbour
sampling); photometric and noise transforms touch the image only. Every random draw comes
from the generator passed in, in a fixed order, so a seeded generator reproduces the output.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from src.data.dataset import SegSample

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = Field(False, description="Apply augmentation to training batches")
    hflip_p: float = Field(0.5, ge=0, le=1)
    vflip_p: float = Field(0.5, ge=0, le=1)
    affine_p: float = Field(0.5, ge=0, le=1, description="Probability of a rotation/scale warp")
    max_rotation: float = Field(30.0, ge=0, description="Degrees")
    scale_range: Tuple[float, float] = (0.9, 1.1)
    brightness_contrast_p: float = Field(0.5, ge=0, le=1)
    brightness_limit: float = Field(0.2, ge=0)
    contrast_limit: float = Field(0.2, ge=0)
    noise_p: float = Field(0.3, ge=0, le=1)
    max_noise_sigma: float = Field(0.05, ge=0)
    seed: int = Field(0, description="Master seed; per-sample generators derive from it")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(hflip_p=0, vflip_p=0, affine_p=0, brightness_contrast_p=0, noise_p=0)


class HorizontalFlip:
    def __init__(self, p: float = 0.5):
        self.p = p

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        if rng.random() < self.p:
            return image[:, :, ::-1].copy(), mask[:, ::-1].copy()
        return image, mask


class VerticalFlip:
    def __init__(self, p: float = 0.5):
        self.p = p

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        if rng.random() < self.p:
            return image[:, ::-1, :].copy(), mask[::-1, :].copy()
        return image, mask


class RandomAffine:
    """Rotation about the centre combined with isotropic scaling; mirrored borders"""

    def __init__(self, p: float, max_rotation: float, scale_range: Tuple[float, float]):
        self.p = p
        self.max_rotation = max_rotation
        self.scale_range = scale_range

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        if not rng.random() < self.p:
            return image, mask
        angle = np.deg2rad(rng.uniform(-self.max_rotation, self.max_rotation))
        scale = rng.uniform(*self.scale_range)
        return warp(image, mask, angle, scale)


def warp(image: np.ndarray, mask: np.ndarray, angle: float, scale: float) -> Pair:
    """Rotate by ``angle`` radians and scale by ``scale`` about the centre"""
    height, width = mask.shape
    cos, sin = np.cos(angle), np.sin(angle)
    # output (y, x) -> source (y, x)
    matrix = np.array([[cos, sin], [-sin, cos]]) / scale
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    offset = center - matrix @ center
    warped = np.stack(
        [ndimage.affine_transform(channel, matrix, offset=offset, order=1, mode="mirror") for channel in image]
    )
    warped_mask = ndimage.affine_transform(mask, matrix, offset=offset, order=0, mode="mirror")
    return warped, warped_mask.astype(mask.dtype)


class BrightnessContrast:
    def __init__(self, p: float, brightness_limit: float, contrast_limit: float):
        self.p = p
        self.brightness_limit = brightness_limit
        self.contrast_limit = contrast_limit

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        if not rng.random() < self.p:
            return image, mask
        brightness = rng.uniform(-self.brightness_limit, self.brightness_limit)
        contrast = rng.uniform(1.0 - self.contrast_limit, 1.0 + self.contrast_limit)
        mean = image.mean()
        return np.clip((image - mean) * contrast + mean + brightness, 0.0, 1.0), mask


class GaussianNoise:
    def __init__(self, p: float, max_sigma: float):
        self.p = p
        self.max_sigma = max_sigma

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        if not rng.random() < self.p:
            return image, mask
        sigma = rng.uniform(0.0, self.max_sigma)
        return np.clip(image + rng.normal(0.0, sigma, size=image.shape), 0.0, 1.0), mask


class Compose:
    def __init__(self, transforms: List):
        self.transforms = transforms

    def __call__(self, image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> Pair:
        for transform in self.transforms:
            image, mask = transform(image, mask, rng)
        return image, mask


def build_pipeline(cfg: AugmentConfig) -> Compose:
    return Compose(
        [
            HorizontalFlip(cfg.hflip_p),
            VerticalFlip(cfg.vflip_p),
            RandomAffine(cfg.affine_p, cfg.max_rotation, cfg.scale_range),
            BrightnessContrast(cfg.brightness_contrast_p, cfg.brightness_limit, cfg.contrast_limit),
            GaussianNoise(cfg.noise_p, cfg.max_noise_sigma),
        ]
    )


def sample_rng(cfg: AugmentConfig, epoch: int, index: int) -> np.random.Generator:
    """Independent generator per (epoch, sample) derived from the master seed"""
    return np.random.default_rng([cfg.seed, epoch, index])


def augment(sample: SegSample, cfg: AugmentConfig, rng: Optional[np.random.Generator] = None) -> SegSample:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    image, mask = build_pipeline(cfg)(sample.image.copy(), sample.mask.copy(), rng)
    return SegSample(image=image, mask=mask, source_id=sample.source_id)

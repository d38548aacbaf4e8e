import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.data.netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from src.errors import ArgumentError, CodecError, LabelRangeError, ShapeError
from src.tensor_core.functional import bilinear_weights

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PaletteMode = Literal["six_tissue", "dfu_tissue"]

SIZE_MULTIPLE = 32


class ClassPalette(BaseModel):
    """Ordered class names with display colours; index 0 is Background"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    names: List[str] = Field(..., min_length=2)
    short_names: List[str] = Field(..., description="Column headers used in reports")
    colors: List[Tuple[int, int, int]] = Field(..., description="Display colour per class")

    @model_validator(mode="after")
    def _check(self) -> "ClassPalette":
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"class names must be unique: {self.names}")
        if self.names[0] != "Background":
            raise ValueError(f"class 0 must be Background, got {self.names[0]!r}")
        if not len(self.names) == len(self.short_names) == len(self.colors):
            raise ValueError("names, short_names and colors must have equal length")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def six_tissue(cls) -> "ClassPalette":
        return cls(
            names=["Background", "Granulation", "Slough", "Maceration", "Necrotic", "Bone", "Tendon"],
            short_names=["Back", "Gran", "Slough", "Mac", "Nec", "Bone", "Tend"],
            colors=[(0, 0, 0), (200, 40, 45), (220, 200, 95), (235, 230, 220), (45, 30, 25), (140, 190, 230), (150, 215, 140)],
        )

    @classmethod
    def dfu_tissue(cls) -> "ClassPalette":
        return cls(
            names=["Background", "Granulation", "Callus", "Fibrin"],
            short_names=["Back", "Gran", "Callus", "Fibrin"],
            colors=[(0, 0, 0), (200, 40, 45), (230, 215, 170), (220, 200, 95)],
        )

    @classmethod
    def from_mode(cls, mode: str) -> "ClassPalette":
        if mode == "six_tissue":
            return cls.six_tissue()
        if mode == "dfu_tissue":
            return cls.dfu_tissue()
        raise ArgumentError(f"unknown palette mode {mode!r}")


@dataclass
class SegSample:
    """Image [3,H,W] in [0,1] (float64) with an integer mask [H,W]"""

    image: np.ndarray
    mask: np.ndarray
    source_id: str

    def validate(self, num_classes: Optional[int] = None) -> "SegSample":
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"{self.source_id}: image must be [3,H,W], got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ShapeError(f"{self.source_id}: mask {self.mask.shape} does not match image {self.image.shape[1:]}")
        if num_classes is not None and self.mask.size and (self.mask.min() < 0 or self.mask.max() >= num_classes):
            raise LabelRangeError(
                f"{self.source_id}: mask values must lie in [0, {num_classes}), found max {int(self.mask.max())}"
            )
        return self

    @property
    def size(self) -> Tuple[int, int]:
        return self.mask.shape


def load_sample(image_path: PathLike, mask_path: PathLike, palette: ClassPalette) -> SegSample:
    """Read a P6 image and a P5 mask of class indices"""
    rgb = read_ppm(image_path)
    mask = read_pgm(mask_path).astype(np.int64)
    sample = SegSample(image=rgb.transpose(2, 0, 1) / 255.0, mask=mask, source_id=Path(image_path).stem)
    return sample.validate(palette.num_classes)


def save_sample(sample: SegSample, image_path: PathLike, mask_path: PathLike) -> None:
    sample.validate()
    if sample.mask.min() < 0 or sample.mask.max() > 255:
        raise LabelRangeError(f"{sample.source_id}: mask values do not fit in 8 bits")
    rgb = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    write_ppm(image_path, rgb)
    write_pgm(mask_path, sample.mask.astype(np.uint8))


def read_manifest(path: PathLike) -> List[Tuple[Path, Path]]:
    """Manifest lines are ``image_path<TAB>mask_path``; relative paths resolve against the manifest"""
    path = Path(path)
    if not path.exists():
        raise CodecError(f"manifest not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=["image", "mask"], dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as exc:
        raise CodecError(f"malformed manifest {path}: {exc}")
    if frame.isna().any().any():
        raise CodecError(f"malformed manifest {path}: every line needs an image and a mask path")
    base = path.parent
    return [(base / image, base / mask) for image, mask in frame.itertuples(index=False)]


def write_manifest(entries: Sequence[Tuple[PathLike, PathLike]], path: PathLike) -> None:
    frame = pd.DataFrame([(str(image), str(mask)) for image, mask in entries], columns=["image", "mask"])
    frame.to_csv(path, sep="\t", header=False, index=False)


def load_manifest_samples(path: PathLike, palette: ClassPalette, size: Optional[int] = None) -> List[SegSample]:
    samples = [load_sample(image, mask, palette) for image, mask in read_manifest(path)]
    if size is not None:
        samples = [resize_sample(sample, size) for sample in samples]
    logger.info(f"Loaded {len(samples)} samples from {path}")
    return samples


def nearest_indices(out_size: int, in_size: int) -> np.ndarray:
    src = np.floor((np.arange(out_size) + 0.5) * in_size / out_size).astype(np.int64)
    return np.minimum(src, in_size - 1)


def resize_sample(sample: SegSample, size: int) -> SegSample:
    """Square resize: bilinear for the image, nearest neighbour for the mask"""
    if size <= 0 or size % SIZE_MULTIPLE:
        raise ArgumentError(f"resize target {size} must be a positive multiple of {SIZE_MULTIPLE}")
    height, width = sample.mask.shape
    if (height, width) == (size, size):
        return SegSample(sample.image.copy(), sample.mask.copy(), sample.source_id)
    rows, cols = bilinear_weights(size, height), bilinear_weights(size, width)
    image = np.matmul(np.matmul(rows, sample.image), cols.T)
    mask = sample.mask[np.ix_(nearest_indices(size, height), nearest_indices(size, width))]
    return SegSample(image, mask, sample.source_id)


def split_dataset(
    samples: Sequence[SegSample], fractions: Sequence[float], seed: int
) -> Tuple[List[SegSample], List[SegSample], List[SegSample]]:
    """Seeded disjoint train/val/test split; test takes whatever rounding leaves"""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ArgumentError(f"need three non-negative split fractions, got {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ArgumentError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(samples)
    n_train = min(int(round(fractions[0] * n)), n)
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train : n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val :]]
    logger.info(f"Split {n} samples into {len(train)}/{len(val)}/{len(test)}")
    return train, val, test


def stack_samples(samples: Sequence[SegSample]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples]).astype(np.int64)


def iterate_batches(
    samples: Sequence[SegSample],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = False,
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (images [B,3,H,W], masks [B,H,W], sample indices)"""
    if batch_size < 1:
        raise ArgumentError(f"batch size must be positive, got {batch_size}")
    order = np.arange(len(samples))
    if shuffle:
        order = (rng if rng is not None else np.random.default_rng()).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        indices = order[start : start + batch_size]
        images, masks = stack_samples([samples[i] for i in indices])
        yield images, masks, indices

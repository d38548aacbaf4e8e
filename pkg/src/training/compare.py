"""Paired comparison of two models on the same test images"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config import RunConfig
from src.data.dataset import resize_sample, split_dataset
from src.data.synthetic import generate_synthetic_dataset
from src.errors import ArgumentError, UndefinedTestError
from src.metrics.report import PairedTestResult
from src.metrics.wilcoxon import wilcoxon_signed_rank
from src.training.trainer import Trainer

logger = logging.getLogger(__name__)

DECODER_KINDS = ("spatial", "allmlp")


@dataclass
class ModelComparison:
    label_a: str
    label_b: str
    mean_a: float
    mean_b: float
    n_pairs: int
    verdict: str
    result: Optional[PairedTestResult] = None

    def summary(self) -> str:
        line = f"{self.label_a} {self.mean_a:.4f} vs {self.label_b} {self.mean_b:.4f} over {self.n_pairs} pairs: {self.verdict}"
        if self.result is not None:
            line += f" (W={self.result.statistic:g}, p={self.result.p_value:.4g}, r={self.result.effect_size_r:.2f})"
        return line


def compare_models(
    per_image_a: Sequence[Optional[float]],
    per_image_b: Sequence[Optional[float]],
    label_a: str = "A",
    label_b: str = "B",
    alpha: float = 0.05,
) -> ModelComparison:
    """Wilcoxon signed-rank comparison of per-image mean DSC.

    Images scored ``None`` by either model (no evaluated class present) are dropped. Identical
    scores give the verdict "no difference" instead of an error.

    Raises:
        ArgumentError: If the two sequences differ in length or too few pairs differ
    """
    if len(per_image_a) != len(per_image_b):
        raise ArgumentError(f"cannot pair {len(per_image_a)} scores with {len(per_image_b)}")
    pairs = [(a, b) for a, b in zip(per_image_a, per_image_b) if a is not None and b is not None]
    if not pairs:
        raise ArgumentError("no image has a score from both models")
    a = np.array([pair[0] for pair in pairs])
    b = np.array([pair[1] for pair in pairs])
    mean_a, mean_b = float(a.mean()), float(b.mean())

    try:
        result = wilcoxon_signed_rank(a, b)
    except UndefinedTestError:
        comparison = ModelComparison(label_a, label_b, mean_a, mean_b, len(pairs), "no difference")
        logger.info(comparison.summary())
        return comparison

    if result.p_value >= alpha:
        verdict = f"no significant difference at alpha={alpha}"
    else:
        better = label_a if mean_a > mean_b else label_b
        verdict = f"{better} is better (p < {alpha})"
    comparison = ModelComparison(label_a, label_b, mean_a, mean_b, len(pairs), verdict, result)
    logger.info(comparison.summary())
    return comparison


@dataclass
class DecoderComparison:
    per_seed: pd.DataFrame
    comparison: ModelComparison
    per_image: Dict[str, List[Optional[float]]] = field(default_factory=dict)


def run_decoder_comparison(
    config: RunConfig, seeds: Sequence[int], n_samples: int = 64, epochs: Optional[int] = None
) -> DecoderComparison:
    """Train the spatial decoder and the All-MLP head with identical budgets on boundary-heavy
    synthetic data for every seed, then pool (seed, test image) pairs into one paired test"""
    if not seeds:
        raise ArgumentError("need at least one seed")
    train_cfg = config.train if epochs is None else config.train.model_copy(update={"max_epochs": epochs})
    rows = []
    pooled: Dict[str, List[Optional[float]]] = {kind: [] for kind in DECODER_KINDS}
    for seed in seeds:
        palette = config.data.build_palette()
        samples = generate_synthetic_dataset(
            n_samples, config.data.synthetic_size, palette.num_classes, seed, style="boundary"
        )
        if config.data.synthetic_size != train_cfg.input_size:
            samples = [resize_sample(sample, train_cfg.input_size) for sample in samples]
        train_set, val_set, test_set = split_dataset(samples, config.data.split_fractions, seed)
        run_config = config.model_copy(update={"train": train_cfg.model_copy(update={"seed": seed})})
        row = {"seed": seed}
        for kind in DECODER_KINDS:
            trainer = Trainer(run_config, palette, decoder_kind=kind)
            trainer.train(train_set, val_set)
            report = trainer.evaluate_samples(test_set)
            row[kind] = report.mean_dsc
            pooled[kind].extend(report.per_image_mean_dsc)
        logger.info(f"Seed {seed}: spatial {row['spatial']:.4f}, allmlp {row['allmlp']:.4f}")
        rows.append(row)

    comparison = compare_models(pooled["spatial"], pooled["allmlp"], "spatial", "allmlp")
    return DecoderComparison(per_seed=pd.DataFrame(rows), comparison=comparison, per_image=pooled)

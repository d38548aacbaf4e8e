import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import pandas as pd

from src.config import RunConfig
from src.decoder.ablation import ABLATION_ROWS, ablation_row, build_ablation_decoder
from src.metrics.report import EvalReport
from src.training.trainer import Trainer, TrainResult, prepare_splits

logger = logging.getLogger(__name__)

TABLE_COLUMNS = [
    "Row",
    "Conv.",
    "Batch Norm",
    "Activation",
    "A. Conv.",
    "Loss Function",
    "Augmentation",
    "DSC",
    "Reported DSC",
]


def configure_ablation(index: int, config: RunConfig) -> RunConfig:
    """``config`` with the decoder, loss and augmentation switches of ablation row ``index``"""
    plan = build_ablation_decoder(ablation_row(index), config.decoder)
    return config.model_copy(
        update={
            "decoder": plan.decoder,
            "model": config.model.model_copy(update={"decoder_kind": "spatial"}),
            "loss": config.loss.model_copy(update={"kind": plan.loss_kind}),
            "augment": config.augment.model_copy(update={"enabled": plan.augmentation}),
        }
    )


def train_ablation_row(index: int, config: RunConfig, epochs: int = 10) -> Tuple[TrainResult, EvalReport]:
    """Train row ``index`` for ``epochs`` epochs; returns the run and its test-split report"""
    row = ablation_row(index)
    run_config = configure_ablation(index, config)
    run_config = run_config.model_copy(update={"train": run_config.train.model_copy(update={"max_epochs": epochs})})
    logger.info(f"Ablation row {index}/{len(ABLATION_ROWS)}: {row.table_cells()}")

    train_set, val_set, test_set = prepare_splits(run_config)
    trainer = Trainer(run_config)
    result = trainer.train(train_set, val_set)
    return result, trainer.evaluate_samples(test_set or val_set)


def run_ablation_row(
    index: int, config: RunConfig, epochs: int = 10, results_path: Optional[Union[str, Path]] = None
) -> pd.DataFrame:
    """Train row ``index`` for ``epochs`` epochs and score it on the test split.

    The returned one-row frame uses the ablation table's columns; with ``results_path`` it is
    appended to that TSV (the header is written only when the file is new).
    """
    row = ablation_row(index)
    _, report = train_ablation_row(index, config, epochs)

    record = {"Row": index, **row.table_cells(), "DSC": round(100.0 * report.mean_dsc, 2), "Reported DSC": row.reported_dsc}
    frame = pd.DataFrame([record], columns=TABLE_COLUMNS)
    if results_path is not None:
        path = Path(results_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep="\t", index=False, mode="a", header=not path.exists())
        logger.info(f"Appended ablation row {index} to {path}")
    return frame

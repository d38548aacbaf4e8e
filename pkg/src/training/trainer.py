import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import RunConfig
from src.data.augment import augment, sample_rng
from src.data.dataset import (
    ClassPalette,
    SegSample,
    iterate_batches,
    load_manifest_samples,
    resize_sample,
    split_dataset,
    stack_samples,
)
from src.data.synthetic import generate_synthetic_dataset
from src.errors import ArgumentError, NonFiniteError
from src.metrics.dice import aggregate_dsc
from src.metrics.report import EvalReport
from src.objectives.losses import build_loss
from src.segmentation.model import WoundFormer, build_model
from src.tensor_core.tensor import GradTape, Tensor
from src.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.training.optim import Adam
from src.training.schedulers import EarlyStopState, PlateauState, early_stop_check, plateau_scheduler_step

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Splits = Tuple[List[SegSample], List[SegSample], List[SegSample]]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mean_dsc: float
    lr: float


@dataclass
class TrainResult:
    history: List[EpochRecord]
    best: Optional[Checkpoint]
    last: Checkpoint
    stopped_early: bool = False

    @property
    def best_metric(self) -> float:
        return max((record.val_mean_dsc for record in self.history), default=-math.inf)

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(record) for record in self.history])


def evaluation_classes(config: RunConfig, palette: ClassPalette) -> List[int]:
    """Classes entering the mean DSC; Background is left out unless configured or four-class"""
    include = config.evaluation.include_background
    if include is None:
        include = config.data.palette == "dfu_tissue"
    return list(range(0 if include else 1, palette.num_classes))


def predict_samples(model: WoundFormer, samples: Sequence[SegSample], batch_size: int, workers: int = 1) -> List[np.ndarray]:
    """Argmax masks for ``samples`` in input order; batches may run on several threads"""
    model.eval()
    batches = [samples[start : start + batch_size] for start in range(0, len(samples), batch_size)]

    def run(batch: Sequence[SegSample]) -> np.ndarray:
        images, _ = stack_samples(batch)
        return model.predict(images)

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, batches))
    else:
        outputs = [run(batch) for batch in batches]
    return [mask for output in outputs for mask in output]


def score_samples(
    model: WoundFormer, samples: Sequence[SegSample], config: RunConfig, palette: ClassPalette
) -> EvalReport:
    predictions = predict_samples(model, samples, config.train.batch_size, config.evaluation.eval_workers)
    classes = evaluation_classes(config, palette)
    return aggregate_dsc(
        [(pred, sample.mask) for pred, sample in zip(predictions, samples)],
        classes,
        [palette.names[k] for k in classes],
        config.evaluation.absent_class_policy,
    )


class Trainer:
    """Adam training with a plateau schedule, early stopping and checkpointing.

    Everything random is derived from ``config.train.seed`` (initialisation, shuffling) and
    ``config.augment.seed`` (per-sample augmentation), so a run is reproducible bit for bit,
    including when resumed from a checkpoint.
    """

    def __init__(self, config: RunConfig, palette: Optional[ClassPalette] = None, decoder_kind: Optional[str] = None):
        self.config = config
        self.palette = palette or config.data.build_palette()
        if self.palette.num_classes != config.decoder.num_classes:
            raise ArgumentError(
                f"palette has {self.palette.num_classes} classes but the decoder predicts {config.decoder.num_classes}"
            )
        train_cfg = config.train
        self.decoder_kind = decoder_kind or config.model.decoder_kind
        self.model = build_model(config, self.decoder_kind)
        self.optimizer = Adam(self.model, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        self.loss_fn = build_loss(config.loss)
        self.rng = np.random.default_rng([train_cfg.seed, 1])
        self.plateau = PlateauState(
            lr=train_cfg.learning_rate,
            factor=train_cfg.plateau_factor,
            patience=train_cfg.plateau_patience,
            threshold=train_cfg.plateau_threshold,
        )
        self.early_stop = EarlyStopState(patience=train_cfg.early_stop_patience, threshold=train_cfg.plateau_threshold)
        self.epoch = 0
        self.history: List[EpochRecord] = []
        self.best_weights: Optional[Dict[str, np.ndarray]] = None

    def _training_batch(self, samples: Sequence[SegSample], indices: np.ndarray, epoch: int) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config.augment
        batch = [samples[i] for i in indices]
        if cfg.enabled:
            batch = [augment(samples[i], cfg, sample_rng(cfg, epoch, int(i))) for i in indices]
        return stack_samples(batch)

    def train_epoch(self, samples: Sequence[SegSample], epoch: int) -> float:
        """One pass over ``samples`` in shuffled order; returns the mean batch loss"""
        self.model.train()
        losses = []
        lr = self.plateau.lr
        for _, _, indices in iterate_batches(samples, self.config.train.batch_size, self.rng, shuffle=True):
            images, masks = self._training_batch(samples, indices, epoch)
            with GradTape() as tape:
                logits = self.model.forward_full(Tensor(images))
                loss = self.loss_fn(logits, masks)
                loss.backward()
            self.optimizer.step(lr)
            self.optimizer.zero_grad()
            losses.append(loss.item())
            logger.debug(f"epoch {epoch} batch loss {losses[-1]:.5f} ({len(tape)} tape records)")
        return float(np.mean(losses))

    def evaluate_samples(self, samples: Sequence[SegSample]) -> EvalReport:
        return score_samples(self.model, samples, self.config, self.palette)

    def capture(self) -> Checkpoint:
        tensors = {f"model/{name}": value for name, value in self.model.state_dict().items()}
        tensors.update(self.optimizer.state_tensors())
        if self.best_weights is not None:
            tensors.update({f"best/{name}": value for name, value in self.best_weights.items()})
        metadata = {
            "epoch": self.epoch,
            "lr": self.plateau.lr,
            "plateau": asdict(self.plateau),
            "early_stop": asdict(self.early_stop),
            "optimizer_step": self.optimizer.state.step,
            "rng_state": self.rng.bit_generator.state,
            "decoder_kind": self.decoder_kind,
            "run_config": self.config.model_dump(mode="json"),
            "history": [asdict(record) for record in self.history],
            "best_metric": self.early_stop.best,
        }
        return Checkpoint(tensors=tensors, metadata=metadata)

    def restore(self, checkpoint: Checkpoint) -> None:
        meta = checkpoint.metadata
        self.model.load_state_dict(checkpoint.section("model"))
        self.optimizer.load_state(
            meta["optimizer_step"], {name: value for name, value in checkpoint.tensors.items() if name.startswith("adam_")}
        )
        self.plateau = PlateauState(**meta["plateau"])
        self.early_stop = EarlyStopState(**meta["early_stop"])
        self.rng.bit_generator.state = meta["rng_state"]
        self.epoch = int(meta["epoch"])
        self.history = [EpochRecord(**record) for record in meta["history"]]
        self.best_weights = checkpoint.section("best") or None
        logger.info(f"Resuming after epoch {self.epoch} at lr {self.plateau.lr:.3e}")

    def _write_history(self, out_dir: Path) -> None:
        frame = pd.DataFrame([asdict(record) for record in self.history])
        frame.to_csv(out_dir / "history.tsv", sep="\t", index=False)

    def train(
        self,
        train_set: Sequence[SegSample],
        val_set: Sequence[SegSample],
        out_dir: Optional[PathLike] = None,
        resume: Optional[Union[Checkpoint, PathLike]] = None,
    ) -> TrainResult:
        """Train until ``max_epochs`` or early stop, then restore the best validation weights.

        Raises:
            NonFiniteError: If a forward operation produced NaN or Inf; the log names the operation
        """
        if not train_set:
            raise ArgumentError("training set is empty")
        if not val_set:
            logger.warning("Validation set is empty; monitoring the training set instead")
            val_set = train_set
        if resume is not None:
            self.restore(resume if isinstance(resume, Checkpoint) else load_checkpoint(resume))
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

        best: Optional[Checkpoint] = None
        stopped = False
        max_epochs = self.config.train.max_epochs
        logger.info(f"Training {self.decoder_kind} model on {len(train_set)} samples for up to {max_epochs} epochs")
        while self.epoch < max_epochs:
            epoch = self.epoch + 1
            lr = self.plateau.lr
            try:
                train_loss = self.train_epoch(train_set, epoch)
            except NonFiniteError as exc:
                logger.error(f"Training aborted at epoch {epoch}: non-finite values produced by {exc.op_name}")
                raise
            metric = self.evaluate_samples(val_set).mean_dsc
            self.epoch = epoch
            self.history.append(EpochRecord(epoch, train_loss, metric, lr))
            logger.info(f"Epoch {epoch}: loss {train_loss:.5f}, val mean DSC {metric:.4f}, lr {lr:.3e}")

            _, self.plateau = plateau_scheduler_step(self.plateau, metric)
            decision, self.early_stop = early_stop_check(self.early_stop, metric)
            if self.early_stop.best_epoch == epoch:
                self.best_weights = self.model.state_dict()
                best = self.capture()
                if out is not None:
                    save_checkpoint(best, out / "best.ckpt")
            if out is not None:
                save_checkpoint(self.capture(), out / "last.ckpt")
                self._write_history(out)
            if decision == "stop":
                stopped = True
                break

        last = self.capture()
        if self.best_weights is not None:
            self.model.load_state_dict(self.best_weights)
            logger.info(f"Restored weights of epoch {self.early_stop.best_epoch} (val mean DSC {self.early_stop.best:.4f})")
        return TrainResult(history=list(self.history), best=best, last=last, stopped_early=stopped)


def prepare_splits(config: RunConfig) -> Splits:
    """Train/val/test samples from the configured manifests, else from the synthetic generator"""
    data = config.data
    palette = data.build_palette()
    size = config.train.input_size
    if data.train_manifest:
        train = load_manifest_samples(data.train_manifest, palette, size)
        val = load_manifest_samples(data.val_manifest, palette, size) if data.val_manifest else []
        test = load_manifest_samples(data.test_manifest, palette, size) if data.test_manifest else []
        return train, val, test
    logger.warning("No training manifest configured; falling back to synthetic data")
    samples = generate_synthetic_dataset(
        data.synthetic_samples, data.synthetic_size, palette.num_classes, data.synthetic_seed, data.synthetic_style
    )
    if data.synthetic_size != size:
        samples = [resize_sample(sample, size) for sample in samples]
    return split_dataset(samples, data.split_fractions, data.synthetic_seed)


def model_from_checkpoint(checkpoint: Checkpoint) -> Tuple[WoundFormer, RunConfig]:
    config = RunConfig.model_validate(checkpoint.metadata["run_config"])
    model = build_model(config, checkpoint.metadata.get("decoder_kind"))
    model.load_state_dict(checkpoint.section("model"))
    return model, config


def evaluate(
    checkpoint: Union[Checkpoint, PathLike], dataset: Sequence[SegSample], palette: Optional[ClassPalette] = None
) -> EvalReport:
    """Score the model stored in ``checkpoint`` on ``dataset``.

    Raises:
        ArgumentError: If ``palette`` disagrees with the checkpoint's class count
        LabelRangeError: If a mask holds a label the model cannot predict
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    model, config = model_from_checkpoint(checkpoint)
    palette = palette or config.data.build_palette()
    if palette.num_classes != model.num_classes:
        raise ArgumentError(f"palette has {palette.num_classes} classes but the checkpoint predicts {model.num_classes}")
    for sample in dataset:
        sample.validate(model.num_classes)
    report = score_samples(model, dataset, config, palette)
    logger.info(f"Evaluated {len(dataset)} images: mean DSC {report.mean_dsc:.4f}")
    return report

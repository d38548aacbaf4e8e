"""Plateau learning-rate schedule and early stopping as pure state machines.

Both monitor a metric where higher is better (validation mean DSC). A value counts as an
improvement only when it beats the best so far by more than ``threshold``. Each step
returns a new state, so the whole schedule can be replayed from the metric history.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Tuple

logger = logging.getLogger(__name__)

Decision = Literal["continue", "stop"]


@dataclass(frozen=True)
class PlateauState:
    lr: float
    factor: float = 0.1
    patience: int = 5
    threshold: float = 1e-4
    best: float = -math.inf
    num_bad: int = 0
    reductions: int = 0


def plateau_scheduler_step(state: PlateauState, metric: float) -> Tuple[float, PlateauState]:
    """Multiply the rate by ``factor`` once more than ``patience`` validations passed without improvement"""
    if metric > state.best + state.threshold:
        return state.lr, replace(state, best=metric, num_bad=0)
    num_bad = state.num_bad + 1
    if num_bad > state.patience:
        lr = state.lr * state.factor
        logger.info(f"Validation metric stalled for {num_bad} epochs; reducing learning rate to {lr:.3e}")
        return lr, replace(state, lr=lr, num_bad=0, reductions=state.reductions + 1)
    return state.lr, replace(state, num_bad=num_bad)


@dataclass(frozen=True)
class EarlyStopState:
    patience: int = 15
    threshold: float = 1e-4
    best: float = -math.inf
    best_epoch: int = 0
    epoch: int = 0
    counter: int = 0


def early_stop_check(state: EarlyStopState, metric: float) -> Tuple[Decision, EarlyStopState]:
    """Stop after ``patience`` consecutive validations without improvement"""
    epoch = state.epoch + 1
    if metric > state.best + state.threshold:
        return "continue", replace(state, best=metric, best_epoch=epoch, epoch=epoch, counter=0)
    counter = state.counter + 1
    new_state = replace(state, epoch=epoch, counter=counter)
    if counter >= state.patience:
        logger.info(f"Early stopping at epoch {epoch}; best metric {state.best:.4f} at epoch {state.best_epoch}")
        return "stop", new_state
    return "continue", new_state

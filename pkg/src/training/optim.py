import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from src.errors import ArgumentError, ShapeError
from src.tensor_core.module import Module

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Step count and first/second moment buffers keyed by parameter name"""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Mapping[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Every shape is checked before anything is written, so a failing call leaves
    parameters and moments untouched.

    Raises:
        ArgumentError: If the names of ``params`` and ``grads`` differ or ``lr`` is negative
        ShapeError: If a gradient or moment buffer does not match its parameter
    """
    if lr < 0:
        raise ArgumentError(f"learning rate must be non-negative, got {lr}")
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ArgumentError(f"parameters and gradients name different tensors: {missing}")
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ShapeError(f"{name}: gradient {grads[name].shape} does not match parameter {value.shape}")
        for buffers in (state.m, state.v):
            if name in buffers and buffers[name].shape != value.shape:
                raise ShapeError(f"{name}: moment buffer {buffers[name].shape} does not match parameter {value.shape}")

    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, value in params.items():
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params, state


class Adam:
    """Adam over the parameters of a module; gradients are read from ``Parameter.grad``"""

    def __init__(self, model: Module, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float) -> None:
        named = list(self.model.named_parameters())
        params = {name: p.data for name, p in named}
        grads = {name: p.grad for name, p in named}
        adam_step(params, grads, self.state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        self.model.zero_grad()

    def state_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {f"adam_m/{name}": value.copy() for name, value in self.state.m.items()}
        tensors.update({f"adam_v/{name}": value.copy() for name, value in self.state.v.items()})
        return tensors

    def load_state(self, step: int, tensors: Mapping[str, np.ndarray]) -> None:
        self.state = AdamState(step=step)
        for key, value in tensors.items():
            kind, _, name = key.partition("/")
            if kind == "adam_m":
                self.state.m[name] = np.array(value, dtype=np.float64)
            elif kind == "adam_v":
                self.state.v[name] = np.array(value, dtype=np.float64)
        logger.debug(f"Restored Adam state at step {step} ({len(self.state.m)} moment buffers)")

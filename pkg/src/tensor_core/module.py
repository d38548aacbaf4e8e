import logging
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import truncnorm

from src.errors import ArgumentError, CheckpointError
from src.tensor_core import functional as F
from src.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A trainable leaf tensor"""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class for layers; parameters, buffers and sub-modules register on assignment.

    Subclasses must call ``super().__init__()`` before assigning attributes.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} does not implement forward()")

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        buffer = np.array(array, dtype=np.float64)
        self._buffers[name] = buffer
        object.__setattr__(self, name, buffer)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buffer in self._buffers.items():
            yield prefix + name, buffer
        for name, module in self._modules.items():
            yield from module.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, module in self._modules.items():
            yield from module.named_modules(prefix + name + ".")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(param.size for param in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, param.data.copy()) for name, param in self.named_parameters())
        state.update((name, buffer.copy()) for name, buffer in self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into the existing parameters and buffers in place.

        Raises:
            CheckpointError: On missing or unexpected names (when strict) or shape mismatch
        """
        targets = {name: param.data for name, param in self.named_parameters()}
        targets.update(self.named_buffers())
        if strict:
            missing = sorted(set(targets) - set(state))
            unexpected = sorted(set(state) - set(targets))
            if missing or unexpected:
                raise CheckpointError(f"state mismatch: missing={missing[:5]}, unexpected={unexpected[:5]}")
        for name, target in targets.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape} does not match {target.shape}")
            np.copyto(target, value)


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._items: List[Module] = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)


def _default_rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


def trunc_normal(shape: Tuple[int, ...], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations"""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


class Conv2d(Module):
    """2-D convolution layer with fan-out scaled normal initialisation

    With ``init_std`` the weights are drawn truncated-normal with that deviation instead, the
    usual choice for a segmentation classifier whose first logits should sit near zero.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        init_std: Optional[float] = None,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ArgumentError(f"channels {in_channels}->{out_channels} not divisible by groups={groups}")
        rng = _default_rng(rng)
        fan_out = kernel_size * kernel_size * out_channels // groups
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        if init_std is None:
            self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_out), size=shape))
        else:
            self.weight = Parameter(trunc_normal(shape, init_std, rng))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups
        self.kernel_size = kernel_size

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class Linear(Module):
    """Affine map over the last dimension; weights truncated-normal initialised"""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        init_std: float = 0.02,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = _default_rng(rng)
        self.weight = Parameter(trunc_normal((out_features, in_features), init_std, rng))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-6):
        super().__init__()
        self.weight = Parameter(np.ones(features))
        self.bias = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, eps=self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.eps, self.momentum = eps, momentum

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.weight,
            self.bias,
            (self.running_mean, self.running_var),
            mode="train" if self.training else "eval",
            eps=self.eps,
            momentum=self.momentum,
        )

import logging
import threading
from abc import abstractmethod
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_local = threading.local()


def _tape_stack() -> List["GradTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


@dataclass
class TapeRecord:
    """One recorded operation: the function (holding its backward rule), its inputs and output"""

    index: int
    function: "Function"
    inputs: Tuple["Tensor", ...]
    output: "Tensor"

    @property
    def name(self) -> str:
        return type(self.function).__name__


class GradTape:
    """Ordered record of the differentiable operations run while the tape is active.

    Tapes are per thread. Operations executed outside any tape produce untracked
    values, which is how inference runs.

    Example:
        >>> with GradTape() as tape:
        ...     loss = model(x).sum()
        ...     loss.backward()
    """

    def __init__(self):
        self.records: List[TapeRecord] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        stack = _tape_stack()
        if self in stack:
            stack.remove(self)
        return False

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def current() -> Optional["GradTape"]:
        stack = _tape_stack()
        return stack[-1] if stack else None

    def record(self, function: "Function", inputs: Sequence["Tensor"], output: "Tensor") -> int:
        index = len(self.records)
        self.records.append(TapeRecord(index, function, tuple(inputs), output))
        output.tape_id = index
        output._tape = self
        return index

    def op_names(self) -> List[str]:
        return [record.name for record in self.records]

    def backward(self, output: "Tensor", grad: Optional[np.ndarray] = None) -> None:
        """Replay the tape in reverse from ``output``, accumulating into leaf gradients.

        Args:
            output: A tensor recorded on this tape
            grad: Gradient of the objective w.r.t. ``output``; defaults to 1 for
                single-element outputs

        Raises:
            ShapeError: If no gradient is given for a multi-element output, or a
                backward rule returns a gradient of the wrong shape
        """
        if output._tape is not self or output.tape_id is None:
            raise ValueError("tensor was not recorded on this tape")
        if grad is None:
            if output.data.size != 1:
                raise ShapeError(
                    f"backward() without a gradient needs a single-element output, got shape {output.shape}"
                )
            grad = np.ones_like(output.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != output.shape:
                raise ShapeError(f"gradient shape {grad.shape} does not match output shape {output.shape}")

        pending = {output.tape_id: grad}
        for record in reversed(self.records[: output.tape_id + 1]):
            upstream = pending.pop(record.index, None)
            if upstream is None:
                continue
            input_grads = record.function.backward(upstream)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for tensor, input_grad in zip(record.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if input_grad.shape != tensor.shape:
                    raise ShapeError(
                        f"{record.name} returned a gradient of shape {input_grad.shape} "
                        f"for an input of shape {tensor.shape}"
                    )
                if tensor._tape is self and tensor.tape_id is not None:
                    prior = pending.get(tensor.tape_id)
                    pending[tensor.tape_id] = input_grad if prior is None else prior + input_grad
                elif tensor.grad is not None:
                    tensor.grad += input_grad
        logger.debug(f"Backward replayed {output.tape_id + 1} of {len(self.records)} tape records")


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward``, which maps the
    gradient w.r.t. the output to a tuple of gradients w.r.t. each tensor input.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    @abstractmethod
    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        """Run the forward pass and record it on the active tape.

        Raises:
            NonFiniteError: If the forward pass produced NaN or Inf
        """
        function = cls(*tensors)
        out = np.asarray(function.forward(*(t.data for t in tensors), **kwargs), dtype=DTYPE, order="C")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values", op_name=cls.__name__)

        tape = GradTape.current()
        track = tape is not None and any(t.requires_grad for t in tensors)
        result = Tensor._wrap(out, requires_grad=track, creator=function if track else None)
        if track:
            tape.record(function, tensors, result)
        return result

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so that ``grad`` matches ``to_shape``"""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(to_shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """N-dimensional array of 64-bit floats with an optional gradient.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised ``grad``
    buffer of the same shape; non-leaf results do not retain gradients.
    """

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self.creator: Optional[Function] = None
        self.tape_id: Optional[int] = None
        self._tape: Optional[GradTape] = None

    @staticmethod
    def _wrap(array: np.ndarray, requires_grad: bool, creator: Optional[Function]) -> "Tensor":
        tensor = Tensor.__new__(Tensor)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.creator = creator
        tensor.tape_id = None
        tensor._tape = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if self._tape is None:
            raise ValueError("backward() needs a tensor produced under an active GradTape")
        self._tape.backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.add(self, other)

    def __radd__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.add(other, self)

    def __sub__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.sub(self, other)

    def __rsub__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.sub(other, self)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.mul(self, other)

    def __rmul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.mul(other, self)

    def __truediv__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.div(self, other)

    def __rtruediv__(self, other: Union["Tensor", float, int]) -> "Tensor":
        return F.div(other, self)

    def __neg__(self) -> "Tensor":
        return F.mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return F.power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return F.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def permute(self, *dims: int) -> "Tensor":
        return F.permute(self, dims)

    def transpose(self, dim0: int = -2, dim1: int = -1) -> "Tensor":
        return F.transpose(self, dim0, dim1)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return F.mean(self, axis=axis, keepdims=keepdims)


from src.tensor_core import functional as F  # noqa: E402

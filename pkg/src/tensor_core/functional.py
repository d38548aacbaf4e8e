"""Differentiable primitives and the functional API built on them"""
import logging
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from src.errors import ArgumentError, LabelRangeError, ShapeError
from src.tensor_core.tensor import DTYPE, Function, Tensor

logger = logging.getLogger(__name__)

Axis = Optional[Union[int, Tuple[int, ...]]]
Operand = Union[Tensor, float, int, np.ndarray]

ACTIVATIONS = ("none", "relu", "gelu")


def _as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _broadcast_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def bilinear_weights(out_size: int, in_size: int) -> np.ndarray:
    """Interpolation matrix [out_size, in_size] for half-pixel-centre bilinear resampling.

    Source coordinates are ``(dst + 0.5) * in / out - 0.5``, clamped at the edges.
    """
    if out_size < 1 or in_size < 1:
        raise ArgumentError(f"resampling extents must be positive, got {out_size} from {in_size}")
    weights = np.zeros((out_size, in_size), dtype=DTYPE)
    src = (np.arange(out_size, dtype=DTYPE) + 0.5) * in_size / out_size - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lower = np.floor(src).astype(np.int64)
    upper = np.minimum(lower + 1, in_size - 1)
    frac = src - lower
    rows = np.arange(out_size)
    np.add.at(weights, (rows, lower), 1.0 - frac)
    np.add.at(weights, (rows, upper), frac)
    return weights


# ---------------------------------------------------------------- elementwise


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b, "add")
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b, "sub")
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            self.unbroadcast(grad * self.b, self.a.shape),
            self.unbroadcast(grad * self.a, self.b.shape),
        )


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b, "div")
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (
            self.unbroadcast(grad / self.b, self.a.shape),
            self.unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class PowScalar(Function):
    def forward(self, x, exponent=2.0):
        self.x, self.exponent = x, exponent
        return np.power(x, exponent)

    def backward(self, grad):
        if self.exponent == 0:
            return (np.zeros_like(self.x),)
        with np.errstate(divide="ignore", invalid="ignore"):
            local = self.exponent * np.power(self.x, self.exponent - 1)
        # derivative is unbounded at 0 for exponents below 1; treated as 0 there
        local = np.where(np.isfinite(local), local, 0.0)
        return (grad * local,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class GELU(Function):
    """Exact GeLU, x * Phi(x)"""

    def forward(self, x):
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        return x * self.cdf

    def backward(self, grad):
        pdf = np.exp(-0.5 * self.x * self.x) / math.sqrt(2.0 * math.pi)
        return (grad * (self.cdf + self.x * pdf),)


# -------------------------------------------------------------- shape / reduce


class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}")

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Permute(Function):
    def forward(self, x, dims=()):
        if sorted(d % x.ndim for d in dims) != list(range(x.ndim)):
            raise ShapeError(f"permutation {tuple(dims)} is invalid for {x.ndim} dimensions")
        self.dims = tuple(d % x.ndim for d in dims)
        return np.transpose(x, self.dims)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.dims)),)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape = x.shape
        self.axes = _normalize_axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.sum(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            for axis in self.axes:
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis=None, keepdims=False):
        out = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = x.size // max(np.size(out), 1) if x.size else 1
        return out / self.count

    def backward(self, grad):
        return super().backward(grad / self.count)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        reference = arrays[0]
        axis = axis % reference.ndim
        for array in arrays[1:]:
            if array.ndim != reference.ndim or any(
                array.shape[d] != reference.shape[d] for d in range(reference.ndim) if d != axis
            ):
                raise ShapeError(
                    f"concat along axis {axis}: shapes {reference.shape} and {array.shape} disagree off-axis"
                )
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


# -------------------------------------------------------------- linear algebra


class Matmul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        try:
            return np.matmul(a, b)
        except ValueError:
            raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}")

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return self.unbroadcast(grad_a, self.a.shape), self.unbroadcast(grad_b, self.b.shape)


class Softmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        self.out = np.exp(_log_softmax(x, axis))
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        out = _log_softmax(x, axis)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * grad.sum(axis=self.axis, keepdims=True),)


class LayerNorm(Function):
    """Normalisation over the last dimension followed by a per-feature affine"""

    def forward(self, x, gamma, beta, eps=1e-6):
        features = x.shape[-1]
        if gamma.shape != (features,) or beta.shape != (features,):
            raise ShapeError(f"layer_norm affine of shape {gamma.shape} does not match {features} features")
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        features = self.xhat.shape[-1]
        dxhat = grad * self.gamma
        dx = (self.inv_std / features) * (
            features * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        )
        dgamma = (grad * self.xhat).reshape(-1, features).sum(axis=0)
        dbeta = grad.reshape(-1, features).sum(axis=0)
        return dx, dgamma, dbeta


class BatchNorm2d(Function):
    """Per-channel normalisation over (N, H, W).

    In training mode the batch statistics are used and the running statistics, passed
    as arrays, are updated in place. Evaluation mode normalises with the running
    statistics.
    """

    def forward(self, x, gamma, beta, running_mean=None, running_var=None, training=True, momentum=0.1, eps=1e-5):
        if x.ndim != 4:
            raise ShapeError(f"batch_norm expects [N,C,H,W] input, got {x.shape}")
        channels = x.shape[1]
        if gamma.shape != (channels,) or beta.shape != (channels,):
            raise ShapeError(f"batch_norm affine of shape {gamma.shape} does not match {channels} channels")
        self.training = training
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.size // channels
            if running_mean is not None:
                unbiased = var * count / (count - 1) if count > 1 else var
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
                running_var *= 1.0 - momentum
                running_var += momentum * unbiased
        else:
            if running_mean is None or running_var is None:
                raise ArgumentError("batch_norm in eval mode needs running statistics")
            if running_mean.shape != (channels,):
                raise ShapeError(f"running statistics of shape {running_mean.shape} do not match {channels} channels")
            mean, var = running_mean, running_var
        self.inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std
        self.gamma = gamma[None, :, None, None]
        return self.gamma * self.xhat + beta[None, :, None, None]

    def backward(self, grad):
        dgamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * self.gamma
        if self.training:
            count = grad.size // grad.shape[1]
            dx = (self.inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - self.xhat * (dxhat * self.xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = dxhat * self.inv_std
        return dx, dgamma, dbeta


# ---------------------------------------------------------------- convolution


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c = padded.shape[:2]
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=DTYPE)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i : i + h_span : stride, j : j + w_span : stride]
    return cols


def _col2im(cols: np.ndarray, padded_shape: Tuple[int, ...], stride: int) -> np.ndarray:
    _, _, kh, kw, out_h, out_w = cols.shape
    padded = np.zeros(padded_shape, dtype=DTYPE)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + h_span : stride, j : j + w_span : stride] += cols[:, :, i, j]
    return padded


class Conv2d(Function):
    """Grouped 2-D cross-correlation via im2col"""

    def forward(self, x, weight, bias=None, stride=1, padding=0, groups=1):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv2d expects [N,C,H,W] input and [Cout,Cin,kh,kw] weight, got {x.shape}, {weight.shape}")
        if stride < 1 or padding < 0 or groups < 1:
            raise ArgumentError(f"conv2d stride={stride}, padding={padding}, groups={groups} out of range")
        n, in_channels, height, width = x.shape
        out_channels, group_channels, kh, kw = weight.shape
        if in_channels != group_channels * groups:
            raise ShapeError(
                f"conv2d channel mismatch: input has {in_channels} channels, weight expects {group_channels * groups}"
            )
        if out_channels % groups:
            raise ShapeError(f"conv2d output channels {out_channels} not divisible by groups={groups}")
        if bias is not None and bias.shape != (out_channels,):
            raise ShapeError(f"conv2d bias of shape {bias.shape} does not match {out_channels} output channels")
        out_h = (height + 2 * padding - kh) // stride + 1
        out_w = (width + 2 * padding - kw) // stride + 1
        if out_h <= 0 or out_w <= 0:
            raise ShapeError(f"conv2d output extent {out_h}x{out_w} is not positive for input {height}x{width}")

        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        cols = _im2col(padded, kh, kw, stride, out_h, out_w)
        self.cols, self.weight = cols, weight
        self.padded_shape, self.in_shape = padded.shape, x.shape
        self.stride, self.padding, self.groups = stride, padding, groups
        self.has_bias = bias is not None
        self.depthwise = group_channels == 1 and out_channels == groups and groups > 1

        if groups == 1:
            out = np.tensordot(weight, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
        elif self.depthwise:
            out = np.einsum("ncijhw,cij->nchw", cols, weight[:, 0])
        else:
            per_group = out_channels // groups
            parts = [
                np.tensordot(
                    weight[g * per_group : (g + 1) * per_group],
                    cols[:, g * group_channels : (g + 1) * group_channels],
                    axes=([1, 2, 3], [1, 2, 3]),
                ).transpose(1, 0, 2, 3)
                for g in range(groups)
            ]
            out = np.concatenate(parts, axis=1)
        if bias is not None:
            out = out + bias[None, :, None, None]
        return out

    def backward(self, grad):
        cols, weight, groups = self.cols, self.weight, self.groups
        out_channels, group_channels = weight.shape[:2]
        if groups == 1:
            dweight = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 4, 5]))
            dcols = np.tensordot(weight, grad, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
        elif self.depthwise:
            dweight = np.einsum("nchw,ncijhw->cij", grad, cols)[:, None]
            dcols = np.einsum("cij,nchw->ncijhw", weight[:, 0], grad)
        else:
            per_group = out_channels // groups
            dweight = np.empty_like(weight)
            dcols = np.empty_like(cols)
            for g in range(groups):
                out_slice = slice(g * per_group, (g + 1) * per_group)
                in_slice = slice(g * group_channels, (g + 1) * group_channels)
                dweight[out_slice] = np.tensordot(grad[:, out_slice], cols[:, in_slice], axes=([0, 2, 3], [0, 4, 5]))
                dcols[:, in_slice] = np.tensordot(weight[out_slice], grad[:, out_slice], axes=([0], [1])).transpose(
                    3, 0, 1, 2, 4, 5
                )
        dpadded = _col2im(dcols, self.padded_shape, self.stride)
        p = self.padding
        height, width = self.in_shape[2:]
        dx = dpadded[:, :, p : p + height, p : p + width] if p else dpadded
        if self.has_bias:
            return dx, dweight, grad.sum(axis=(0, 2, 3))
        return dx, dweight


class BilinearUpsample(Function):
    def forward(self, x, out_h=1, out_w=1):
        if x.ndim != 4:
            raise ShapeError(f"bilinear_upsample expects [N,C,H,W] input, got {x.shape}")
        height, width = x.shape[2:]
        if out_h < height or out_w < width:
            raise ArgumentError(f"bilinear_upsample only enlarges: {height}x{width} -> {out_h}x{out_w}")
        self.identity = (out_h, out_w) == (height, width)
        if self.identity:
            return x.copy()
        self.rows = bilinear_weights(out_h, height)
        self.cols = bilinear_weights(out_w, width)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        if self.identity:
            return (grad,)
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


# ------------------------------------------------------------------- losses


class CrossEntropy(Function):
    """Fused log-softmax and negative log-likelihood over the class axis of [N,K,H,W] logits"""

    def forward(self, logits, labels=None, class_weights=None):
        labels = check_labels(logits, labels)
        log_probs = _log_softmax(logits, axis=1)
        picked = np.take_along_axis(log_probs, labels[:, None], axis=1)[:, 0]
        self.probs = np.exp(log_probs)
        self.labels = labels
        if class_weights is None:
            self.pixel_weights = np.full(picked.shape, 1.0 / picked.size)
            return -picked.mean()
        class_weights = np.asarray(class_weights, dtype=DTYPE)
        if class_weights.shape != (logits.shape[1],):
            raise ShapeError(f"{class_weights.shape[0]} class weights given for {logits.shape[1]} classes")
        weights = class_weights[labels]
        total = weights.sum()
        if total <= 0:
            raise ArgumentError("class weights sum to zero over the labelled pixels")
        self.pixel_weights = weights / total
        return -(weights * picked).sum() / total

    def backward(self, grad):
        dlogits = self.probs.copy()
        target = np.take_along_axis(dlogits, self.labels[:, None], axis=1) - 1.0
        np.put_along_axis(dlogits, self.labels[:, None], target, axis=1)
        return (grad * dlogits * self.pixel_weights[:, None],)


def check_labels(logits: np.ndarray, labels: Optional[np.ndarray]) -> np.ndarray:
    """Validate an [N,H,W] integer label map against [N,K,H,W] logits.

    Raises:
        ShapeError: If the shapes disagree
        LabelRangeError: If any label lies outside [0, K)
    """
    if labels is None:
        raise ArgumentError("labels are required")
    labels = np.asarray(labels)
    if logits.ndim != 4:
        raise ShapeError(f"expected [N,K,H,W] logits, got {logits.shape}")
    expected = (logits.shape[0],) + logits.shape[2:]
    if labels.shape != expected:
        raise ShapeError(f"labels of shape {labels.shape} do not match logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise LabelRangeError("labels must be integers")
        labels = labels.astype(np.int64)
    num_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(
            f"labels must lie in [0, {num_classes}), found range [{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64, copy=False)


# ------------------------------------------------------------- functional API


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(_as_tensor(a), _as_tensor(b))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(_as_tensor(a), _as_tensor(b))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def div(a: Operand, b: Operand) -> Tensor:
    return Div.apply(_as_tensor(a), _as_tensor(b))


def power(x: Tensor, exponent: float) -> Tensor:
    return PowScalar.apply(x, exponent=float(exponent))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, dims: Sequence[int]) -> Tensor:
    return Permute.apply(x, dims=tuple(dims))


def transpose(x: Tensor, dim0: int = -2, dim1: int = -1) -> Tensor:
    dims = list(range(x.ndim))
    dims[dim0], dims[dim1] = dims[dim1], dims[dim0]
    return permute(x, dims)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Matmul.apply(_as_tensor(a), _as_tensor(b))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Batch normalisation of an [N,C,H,W] tensor.

    Args:
        running_stats: ``(running_mean, running_var)`` arrays, updated in place in train mode
        mode: ``"train"`` or ``"eval"``
    """
    if mode not in ("train", "eval"):
        raise ArgumentError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if eps <= 0:
        raise ArgumentError(f"batch_norm eps must be positive, got {eps}")
    running_mean, running_var = running_stats if running_stats is not None else (None, None)
    return BatchNorm2d.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=mode == "train",
        momentum=momentum,
        eps=eps,
    )


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "none":
        return x
    raise ArgumentError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    tensors = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*tensors, stride=stride, padding=padding, groups=groups)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    return BilinearUpsample.apply(x, out_h=int(out_h), out_w=int(out_w))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation with ``a``'s channels first"""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels expects [N,C,H,W] operands, got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last dimension"""
    out = matmul(x, transpose(weight))
    return out if bias is None else out + bias


def to_tokens(x: Tensor) -> Tensor:
    """[N,C,H,W] feature map -> [N,H*W,C] token sequence"""
    n, c, h, w = x.shape
    return permute(reshape(x, (n, c, h * w)), (0, 2, 1))


def to_feature_map(tokens: Tensor, height: int, width: int) -> Tensor:
    """[N,H*W,C] token sequence -> [N,C,H,W] feature map"""
    n, length, c = tokens.shape
    if length != height * width:
        raise ShapeError(f"token count {length} does not equal {height}x{width}")
    return reshape(permute(tokens, (0, 2, 1)), (n, c, height, width))


def cross_entropy(logits: Tensor, labels: np.ndarray, class_weights: Optional[Sequence[float]] = None) -> Tensor:
    return CrossEntropy.apply(logits, labels=labels, class_weights=class_weights)

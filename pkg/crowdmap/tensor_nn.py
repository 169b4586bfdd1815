"""
crowdmap - Tensor Module
A small dense tensor with a gradient slot and the five differentiable operations the
multi-stream networks need: same-padded 2-D convolution, 2x2 max pooling, the
rectifier, Adam, and finite-difference gradient checking.

All arithmetic is float64. Tensors are (batch, channels, rows, cols); the operations
also accept a single (channels, rows, cols) tensor.
"""

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .exceptions import CheckpointError, GradCheckError, ShapeError

_POOL_PAD = -np.inf


@dataclass
class Tensor:
    values: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grad is not None and np.shape(self.grad) != self.values.shape:
            raise ShapeError(f"gradient shape {np.shape(self.grad)} differs from values {self.values.shape}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ShapeError(f"gradient shape {grad.shape} differs from values {self.values.shape}")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W), got shape {x.shape}")
    return x, False


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class ConvLayer:
    """Same-padded k x k convolution (cross-correlation) with bias."""

    kernel_size: int
    in_channels: int
    out_channels: int
    weights: Tensor = None
    bias: Tensor = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd and positive, got {self.kernel_size}")
        expected = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        if self.weights is None:
            self.weights = Tensor(np.zeros(expected))
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels))
        if self.weights.shape != expected:
            raise ShapeError(f"weights shape {self.weights.shape}, expected {expected}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape}, expected ({self.out_channels},)")

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2

    def init_gaussian(self, rng: np.random.Generator, std: float) -> None:
        self.weights.values = rng.normal(0.0, std, size=self.weights.shape)
        self.bias.values = np.zeros(self.out_channels)


def conv2d_forward(x, layer: ConvLayer) -> Tensor:
    """
    Zero-padded cross-correlation; output has the input's spatial size.

    Raises:
        ShapeError: input channels differ from the layer's
    """
    batch, single = _as_batch(_values(x))
    if batch.shape[1] != layer.in_channels:
        raise ShapeError(f"input has {batch.shape[1]} channels, layer expects {layer.in_channels}")
    k, p = layer.kernel_size, layer.padding
    _, _, rows, cols = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)))
    weights = layer.weights.values
    out = np.zeros((layer.out_channels, batch.shape[0], rows, cols))
    for i in range(k):
        for j in range(k):
            out += np.tensordot(weights[:, :, i, j], padded[:, :, i:i + rows, j:j + cols], axes=([1], [1]))
    out = out.transpose(1, 0, 2, 3) + layer.bias.values[np.newaxis, :, np.newaxis, np.newaxis]
    return Tensor(out[0] if single else out)


def conv2d_backward(x, layer: ConvLayer, grad_out) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact gradients of `conv2d_forward`.

    Returns:
        (grad_x, grad_weights, grad_bias)
    """
    batch, single = _as_batch(_values(x))
    grad, _ = _as_batch(_values(grad_out))
    expected = (batch.shape[0], layer.out_channels) + batch.shape[2:]
    if grad.shape != expected:
        raise ShapeError(f"output gradient shape {grad.shape}, expected {expected}")
    if batch.shape[1] != layer.in_channels:
        raise ShapeError(f"input has {batch.shape[1]} channels, layer expects {layer.in_channels}")
    k, p = layer.kernel_size, layer.padding
    _, _, rows, cols = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)))
    weights = layer.weights.values
    grad_w = np.zeros_like(weights)
    grad_padded = np.zeros_like(padded)
    for i in range(k):
        for j in range(k):
            window = padded[:, :, i:i + rows, j:j + cols]
            grad_w[:, :, i, j] = np.tensordot(grad, window, axes=([0, 2, 3], [0, 2, 3]))
            grad_padded[:, :, i:i + rows, j:j + cols] += np.tensordot(
                grad, weights[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    grad_x = grad_padded[:, :, p:p + rows, p:p + cols]
    grad_b = grad.sum(axis=(0, 2, 3))
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def maxpool2_forward(x) -> Tuple[Tensor, np.ndarray]:
    """
    Non-overlapping 2x2 max pool, stride 2. Odd sides are padded with -inf cells
    that never win. Ties go to the first cell in row-major order.

    Returns:
        (pooled tensor, argmax index 0..3 within each window)
    """
    batch, single = _as_batch(_values(x))
    b, c, rows, cols = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (0, rows % 2), (0, cols % 2)), constant_values=_POOL_PAD)
    pr, pc = padded.shape[2] // 2, padded.shape[3] // 2
    windows = padded.reshape(b, c, pr, 2, pc, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, pr, pc, 4)
    argmax = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, argmax[..., np.newaxis], axis=-1)[..., 0]
    if single:
        return Tensor(pooled[0]), argmax[0]
    return Tensor(pooled), argmax


def maxpool2_backward(grad_out, argmax: np.ndarray, input_shape: Sequence[int]) -> np.ndarray:
    """Route each output gradient to the cell that won its window."""
    grad, single = _as_batch(_values(grad_out))
    winners, _ = _as_batch(np.asarray(argmax))
    winners = winners.astype(np.int64)
    if grad.shape != winners.shape:
        raise ShapeError(f"gradient shape {grad.shape} differs from argmax shape {winners.shape}")
    b, c, pr, pc = grad.shape
    windows = np.zeros((b, c, pr, pc, 4))
    np.put_along_axis(windows, winners[..., np.newaxis], grad[..., np.newaxis], axis=-1)
    full = windows.reshape(b, c, pr, pc, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * pr, 2 * pc)
    rows, cols = input_shape[-2], input_shape[-1]
    full = full[:, :, :rows, :cols]
    return full[0] if single else full


def relu_forward(x) -> Tensor:
    return Tensor(np.maximum(_values(x), 0.0))


def relu_backward(x, grad_out) -> np.ndarray:
    """Pass gradients where the input was strictly positive."""
    return np.where(_values(x) > 0.0, _values(grad_out), 0.0)


@dataclass
class AdamState:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    def ensure(self, params: Sequence[Tensor]) -> None:
        if not self.first_moments:
            self.first_moments = [np.zeros_like(p.values) for p in params]
            self.second_moments = [np.zeros_like(p.values) for p in params]
        if len(self.first_moments) != len(params):
            raise ShapeError(f"optimizer tracks {len(self.first_moments)} parameters, got {len(params)}")


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState) -> Tuple[Sequence[Tensor], AdamState]:
    """
    One bias-corrected Adam update, in place.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    state.ensure(params)
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for index, (param, grad) in enumerate(zip(params, grads)):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(f"gradient {index} has shape {grad.shape}, parameter {param.shape}")
        m = state.first_moments[index]
        v = state.second_moments[index]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param.values -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params, state


class Differentiable(Protocol):
    """What `grad_check` needs from a network."""

    def named_parameters(self) -> List[Tuple[str, Tensor]]: ...

    def loss_and_gradients(self, images: np.ndarray, targets: np.ndarray) -> float: ...

    def evaluate_loss(self, images: np.ndarray, targets: np.ndarray) -> float: ...

    def activation_signature(self, images: np.ndarray) -> bytes: ...


@dataclass
class GradCheckReport:
    tolerance: float
    max_relative_error: float
    per_layer: Dict[str, float]
    checked: int
    skipped: int
    offending_layer: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.offending_layer is None

    def to_dict(self) -> Dict[str, object]:
        return {
            'passed': self.passed,
            'tolerance': self.tolerance,
            'max_relative_error': self.max_relative_error,
            'per_layer': dict(self.per_layer),
            'checked': self.checked,
            'skipped': self.skipped,
            'offending_layer': self.offending_layer,
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_gradient(func: Callable[[], float], array: np.ndarray, index: Tuple[int, ...],
                       h: float = 1e-3) -> float:
    """Central difference of `func` with respect to one entry of `array` (restored afterwards)."""
    original = array[index]
    array[index] = original + h
    plus = func()
    array[index] = original - h
    minus = func()
    array[index] = original
    return (plus - minus) / (2.0 * h)


MAX_GRADCHECK_PARAMETERS = 250_000


def grad_check(network: Differentiable, images: np.ndarray, targets: np.ndarray,
               tolerance: float = 1e-4, h: float = 1e-3, samples_per_tensor: int = 8,
               seed: int = 0) -> GradCheckReport:
    """
    Compare analytic parameter gradients with central differences.

    A random subset of entries of every parameter tensor is checked. Entries whose
    perturbation flips a rectifier mask or a pooling winner straddle a kink and are
    skipped; inside one activation pattern the loss is quadratic in each parameter,
    so central differences are exact up to rounding.

    Raises:
        GradCheckError: network too large for finite differences
    """
    named = network.named_parameters()
    total = sum(p.size for _, p in named)
    if total > MAX_GRADCHECK_PARAMETERS:
        raise GradCheckError(f"network has {total} parameters; gradient checks allow {MAX_GRADCHECK_PARAMETERS}")
    network.loss_and_gradients(images, targets)
    analytic = {name: param.grad.copy() for name, param in named}
    baseline = network.activation_signature(images)

    rng = np.random.default_rng(seed)
    per_layer: Dict[str, float] = {}
    checked = skipped = 0
    offending = None
    for name, param in named:
        flat_indices = rng.choice(param.size, size=min(samples_per_tensor, param.size), replace=False)
        layer = name.rsplit('.', 1)[0]
        for flat in np.sort(flat_indices):
            index = np.unravel_index(int(flat), param.shape)
            original = param.values[index]
            stable = True
            for delta in (h, -h):
                param.values[index] = original + delta
                stable = stable and network.activation_signature(images) == baseline
            param.values[index] = original
            if not stable:
                skipped += 1
                continue
            numeric = numerical_gradient(lambda: network.evaluate_loss(images, targets), param.values, index, h)
            error = relative_error(float(analytic[name][index]), numeric)
            per_layer[layer] = max(per_layer.get(layer, 0.0), error)
            checked += 1
            if error > tolerance and offending is None:
                offending = layer
    # leave the gradient slots as the analytic pass computed them
    network.loss_and_gradients(images, targets)
    worst = max(per_layer.values(), default=0.0)
    return GradCheckReport(tolerance, worst, per_layer, checked, skipped, offending)


CHECKPOINT_MAGIC = b'MSNW'
CHECKPOINT_VERSION = 1


def write_parameters(handle: BinaryIO, descriptor: bytes, tensors: Sequence[Tensor]) -> None:
    """
    Layout: magic 'MSNW', version u8, descriptor length u32 LE, descriptor bytes,
    then every tensor's values as float64 LE in declaration order.
    """
    handle.write(CHECKPOINT_MAGIC)
    handle.write(struct.pack('<BI', CHECKPOINT_VERSION, len(descriptor)))
    handle.write(descriptor)
    for tensor in tensors:
        handle.write(np.ascontiguousarray(tensor.values, dtype='<f8').tobytes())


def read_descriptor(data: bytes) -> Tuple[bytes, int]:
    """Return (descriptor, offset of the first parameter byte)."""
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    if len(data) < 9:
        raise CheckpointError("checkpoint header truncated")
    version, length = struct.unpack_from('<BI', data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 9 + length
    if len(data) < start:
        raise CheckpointError("checkpoint descriptor truncated")
    return data[9:start], start


def read_parameters(data: bytes, offset: int, tensors: Sequence[Tensor]) -> None:
    """Fill `tensors` in place from the parameter section."""
    expected = offset + 8 * sum(t.size for t in tensors)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint holds {len(data)} bytes, the network needs {expected}")
    for tensor in tensors:
        count = tensor.size
        tensor.values = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(tensor.shape).copy()
        offset += 8 * count

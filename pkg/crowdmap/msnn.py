"""
crowdmap - Multi-Stream Network Module
Declarative stream specs, the four stock presets, the network itself (parallel
streams, channel concatenation, 1x1 fusion), the squared-error loss and the
training loop.
"""

import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from .density_core import DensityMap, downscale_preserving_count
from .exceptions import CheckpointError, NonFiniteLossError, ShapeError, ValidationError
from .tensor_nn import (
    AdamState,
    ConvLayer,
    Tensor,
    adam_step,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    read_descriptor,
    read_parameters,
    relu_backward,
    write_parameters,
)
from .utils.helpers import atomic_write_bytes, timer
from .utils.logger import LoggerMixin

DOWNSCALE = 4

_CONV_PATTERN = re.compile(r'^conv\(\s*(\d+)\s*,\s*(\d+)\s*\)$')


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in ('conv', 'pool2'):
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kind == 'conv' and (self.kernel_size < 1 or self.kernel_size % 2 == 0 or self.out_channels < 1):
            raise ValidationError(f"conv needs an odd kernel and positive channels, got {self}")

    @classmethod
    def conv(cls, kernel_size: int, out_channels: int) -> "LayerSpec":
        return cls('conv', int(kernel_size), int(out_channels))

    @classmethod
    def pool(cls) -> "LayerSpec":
        return cls('pool2')

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        text = str(text).strip().lower()
        if text == 'pool2':
            return cls.pool()
        match = _CONV_PATTERN.match(text)
        if not match:
            raise ValidationError(f"cannot parse layer {text!r}; use 'conv(k, channels)' or 'pool2'")
        return cls.conv(int(match.group(1)), int(match.group(2)))

    def __str__(self) -> str:
        return 'pool2' if self.kind == 'pool2' else f"conv({self.kernel_size},{self.out_channels})"


@dataclass(frozen=True)
class StreamSpec:
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(self.layers))
        pools = sum(1 for layer in self.layers if layer.kind == 'pool2')
        if pools != 2:
            raise ValidationError(f"a stream needs exactly two pool2 layers, got {pools}")
        if not any(layer.kind == 'conv' for layer in self.layers):
            raise ValidationError("a stream needs at least one conv layer")

    @property
    def final_channels(self) -> int:
        return [layer for layer in self.layers if layer.kind == 'conv'][-1].out_channels

    @property
    def max_kernel(self) -> int:
        return max(layer.kernel_size for layer in self.layers if layer.kind == 'conv')

    def shrink(self, divisor: int) -> "StreamSpec":
        return StreamSpec(tuple(
            layer if layer.kind == 'pool2' else LayerSpec.conv(layer.kernel_size, max(1, layer.out_channels // divisor))
            for layer in self.layers
        ))


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int
    streams: Tuple[StreamSpec, ...]
    fusion: LayerSpec = LayerSpec('conv', 1, 1)

    def __post_init__(self):
        object.__setattr__(self, 'streams', tuple(self.streams))
        if self.in_channels < 1:
            raise ValidationError(f"in_channels must be positive, got {self.in_channels}")
        if not 1 <= len(self.streams) <= 4:
            raise ValidationError(f"a network has 1 to 4 streams, got {len(self.streams)}")
        if self.fusion != LayerSpec.conv(1, 1):
            raise ValidationError(f"the fusion block is conv(1,1), got {self.fusion}")

    @property
    def fusion_in_channels(self) -> int:
        return sum(stream.final_channels for stream in self.streams)

    @property
    def max_kernel(self) -> int:
        return max(stream.max_kernel for stream in self.streams)

    def shrink(self, divisor: int) -> "NetworkSpec":
        """Integer-divide every conv's out_channels (minimum 1); the fusion stays conv(1,1)."""
        if divisor < 1:
            raise ValidationError(f"shrink divisor must be positive, got {divisor}")
        return replace(self, streams=tuple(stream.shrink(divisor) for stream in self.streams))

    def without_stream(self, index: int) -> "NetworkSpec":
        """Drop one stream and re-fuse over the remaining ones."""
        streams = list(self.streams)
        del streams[index]
        return replace(self, streams=tuple(streams))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'in_channels': self.in_channels,
            'streams': [[str(layer) for layer in stream.layers] for stream in self.streams],
            'fusion': str(self.fusion),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        try:
            streams = tuple(StreamSpec(tuple(LayerSpec.parse(layer) for layer in stream)) for stream in data['streams'])
            return cls(int(data.get('in_channels', 1)), streams, LayerSpec.parse(data.get('fusion', 'conv(1,1)')))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed network spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))


def load_network_spec(path: Union[str, Path]) -> NetworkSpec:
    """
    Read a network spec from YAML (or JSON), e.g.::

        in_channels: 1
        streams:
          - [conv(3,24), conv(3,48), pool2, conv(3,24), pool2, conv(3,12)]
        fusion: conv(1,1)
    """
    with open(path, 'r', encoding='utf-8') as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: a network spec must be a mapping")
    return NetworkSpec.from_dict(data)


_C, _P = LayerSpec.conv, LayerSpec.pool

# (first conv, second conv, conv after the first pool, final conv) per stream
_STREAM_TABLE = (
    ((3, 24), (3, 48), (3, 24), (3, 12)),
    ((7, 20), (5, 40), (5, 20), (5, 10)),
    ((9, 20), (7, 32), (7, 16), (7, 8)),
    ((11, 12), (9, 24), (9, 12), (9, 6)),
)


def _stream(row, final: bool) -> StreamSpec:
    first, second, third, last = row
    layers = [_C(*first), _C(*second), _P(), _C(*third), _P()]
    if final:
        layers.append(_C(*last))
    return StreamSpec(tuple(layers))


def preset(n_streams: int, append_final_conv: bool = False, in_channels: int = 1) -> NetworkSpec:
    """
    Stock architecture with 1 to 4 streams.

    Streams are added in order of growing kernels. The four-stream preset ends its
    streams at the second pool; `append_final_conv` gives it a final conv like the
    smaller presets.
    """
    if n_streams not in (1, 2, 3, 4):
        raise ValidationError(f"presets exist for 1 to 4 streams, got {n_streams}")
    final = n_streams < 4 or append_final_conv
    return NetworkSpec(in_channels, tuple(_stream(row, final) for row in _STREAM_TABLE[:n_streams]))


def normalize_image(pixels: np.ndarray) -> np.ndarray:
    """0-255 intensities to the [0, 1] network input range."""
    return np.asarray(pixels, dtype=np.float64) / 255.0


def prepare_target(density: DensityMap) -> np.ndarray:
    """Ground truth at output resolution: count-preserving sum pooling by 4."""
    return downscale_preserving_count(density, DOWNSCALE).values


def _as_input_batch(images: np.ndarray, in_channels: int) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[np.newaxis, np.newaxis]
    elif images.ndim == 3:
        images = images[np.newaxis] if images.shape[0] == in_channels else images[:, np.newaxis]
    if images.ndim != 4 or images.shape[1] != in_channels:
        raise ShapeError(f"cannot read {np.shape(images)} as a batch with {in_channels} input channels")
    return images


def _as_target_batch(targets) -> np.ndarray:
    if isinstance(targets, DensityMap):
        targets = targets.values
    if isinstance(targets, (list, tuple)):
        targets = np.stack([t.values if isinstance(t, (DensityMap, Tensor)) else np.asarray(t) for t in targets])
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        targets = targets[np.newaxis]
    if targets.ndim == 4 and targets.shape[1] == 1:
        targets = targets[:, 0]
    if targets.ndim != 3:
        raise ShapeError(f"cannot read {targets.shape} as a batch of 2-D targets")
    return targets


def loss(predictions, ground_truths) -> float:
    """
    L = 1 / (2 |T|) * sum_i ||prediction_i - ground_truth_i||^2, |T| the batch size.
    """
    pred = _as_target_batch(predictions)
    truth = _as_target_batch(ground_truths)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from ground truth {truth.shape}")
    return float(np.sum((pred - truth) ** 2) / (2.0 * pred.shape[0]))


class MultiStreamNetwork:
    """
    Parallel streams over the same input, concatenated on channels and fused by a 1x1
    conv into one density channel at a quarter of the input resolution.

    A rectifier follows every conv except a stream's last layer and the fusion.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, init_std: float = 0.01):
        self.spec = spec
        self.streams: List[List[Optional[ConvLayer]]] = []
        rng = np.random.default_rng(seed)
        for stream in spec.streams:
            channels = spec.in_channels
            layers: List[Optional[ConvLayer]] = []
            for layer in stream.layers:
                if layer.kind == 'pool2':
                    layers.append(None)
                    continue
                conv = ConvLayer(layer.kernel_size, channels, layer.out_channels)
                conv.init_gaussian(rng, init_std)
                layers.append(conv)
                channels = layer.out_channels
            self.streams.append(layers)
        self.fusion = ConvLayer(1, spec.fusion_in_channels, 1)
        self.fusion.init_gaussian(rng, init_std)
        self._cache: Optional[Dict[str, Any]] = None
        self.last_output: Optional[np.ndarray] = None

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = []
        for s, layers in enumerate(self.streams):
            for l, conv in enumerate(layers):
                if conv is not None:
                    named.append((f"stream{s}.layer{l}.weights", conv.weights))
                    named.append((f"stream{s}.layer{l}.bias", conv.bias))
        named.append(("fusion.weights", self.fusion.weights))
        named.append(("fusion.bias", self.fusion.bias))
        return named

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def _pad_input(self, images) -> np.ndarray:
        batch = _as_input_batch(images, self.spec.in_channels)
        rows, cols = batch.shape[2:]
        if rows < self.spec.max_kernel or cols < self.spec.max_kernel:
            raise ShapeError(f"input {rows}x{cols} is smaller than the largest kernel {self.spec.max_kernel}")
        pad_rows, pad_cols = (-rows) % DOWNSCALE, (-cols) % DOWNSCALE
        if pad_rows or pad_cols:
            batch = np.pad(batch, ((0, 0), (0, 0), (0, pad_rows), (0, pad_cols)))
        return batch

    def forward(self, images, keep_cache: bool = False) -> np.ndarray:
        """
        Raw (unclamped) output of shape (batch, 1, ceil(rows/4), ceil(cols/4)).

        Inputs are zero-padded to a multiple of 4 per side first.
        """
        x_in = self._pad_input(images)
        trace: List[List[Tuple[Any, ...]]] = []
        features = []
        for stream_spec, layers in zip(self.spec.streams, self.streams):
            steps: List[Tuple[Any, ...]] = []
            x = x_in
            last = len(layers) - 1
            for index, conv in enumerate(layers):
                if conv is None:
                    pooled, argmax = maxpool2_forward(x)
                    steps.append(('pool', x.shape, argmax))
                    x = pooled.values
                    continue
                z = conv2d_forward(x, conv).values
                rectified = index != last
                steps.append(('conv', x, z if rectified else None))
                x = np.maximum(z, 0.0) if rectified else z
            trace.append(steps)
            features.append(x)
        fused_in = np.concatenate(features, axis=1)
        output = conv2d_forward(fused_in, self.fusion).values
        self._cache = {'trace': trace, 'fused_in': fused_in, 'widths': [f.shape[1] for f in features]} if keep_cache else None
        self.last_output = output
        return output

    def backward(self, grad_output: np.ndarray) -> None:
        """Accumulate parameter gradients for the last `forward(..., keep_cache=True)`."""
        if self._cache is None:
            raise RuntimeError("backward needs a forward pass with keep_cache=True")
        grad_fused, grad_w, grad_b = conv2d_backward(self._cache['fused_in'], self.fusion, grad_output)
        self.fusion.weights.accumulate(grad_w)
        self.fusion.bias.accumulate(grad_b)
        offset = 0
        for steps, layers, width in zip(self._cache['trace'], self.streams, self._cache['widths']):
            grad = grad_fused[:, offset:offset + width]
            offset += width
            for step, conv in zip(reversed(steps), reversed(layers)):
                if step[0] == 'pool':
                    _, input_shape, argmax = step
                    grad = maxpool2_backward(grad, argmax, input_shape)
                    continue
                _, x, z = step
                if z is not None:
                    grad = relu_backward(z, grad)
                grad, grad_w, grad_b = conv2d_backward(x, conv, grad)
                conv.weights.accumulate(grad_w)
                conv.bias.accumulate(grad_b)

    def loss_and_gradients(self, images, targets) -> float:
        """Loss of one batch; parameter gradients are reset and refilled."""
        truth = _as_target_batch(targets)
        output = self.forward(images, keep_cache=True)
        if output.shape[0] != truth.shape[0] or output.shape[2:] != truth.shape[1:]:
            raise ShapeError(f"output shape {output.shape} does not match targets {truth.shape}")
        self.zero_grad()
        self.backward((output - truth[:, np.newaxis]) / output.shape[0])
        self._cache = None
        return loss(output, truth)

    def evaluate_loss(self, images, targets) -> float:
        return loss(self.forward(images), targets)

    def activation_signature(self, images) -> bytes:
        """Digest of every rectifier mask and pooling winner for `images`."""
        self.forward(images, keep_cache=True)
        digest = hashlib.sha256()
        for steps in self._cache['trace']:
            for step in steps:
                if step[0] == 'pool':
                    digest.update(np.ascontiguousarray(step[2], dtype=np.int8).tobytes())
                elif step[2] is not None:
                    digest.update(np.packbits(step[2] > 0.0).tobytes())
        self._cache = None
        return digest.digest()

    def predict_maps(self, images) -> np.ndarray:
        """Output maps clamped at zero, shape (batch, rows/4, cols/4)."""
        return np.maximum(self.forward(images)[:, 0], 0.0)

    def predict_count(self, image) -> float:
        """Count of one image: the sum of its clamped output map."""
        return float(self.predict_maps(image)[0].sum())

    def predict_counts(self, images) -> np.ndarray:
        return self.predict_maps(images).sum(axis=(1, 2))


def save_checkpoint(network: MultiStreamNetwork, path: Union[str, Path]) -> Path:
    buffer = io.BytesIO()
    write_parameters(buffer, network.spec.to_json().encode('utf-8'), network.parameters())
    return atomic_write_bytes(path, buffer.getvalue())


def load_checkpoint(path: Union[str, Path], expected: Optional[NetworkSpec] = None) -> MultiStreamNetwork:
    """
    Rebuild a network from a checkpoint.

    Raises:
        CheckpointError: malformed file, or its spec differs from `expected`
    """
    data = Path(path).read_bytes()
    descriptor, offset = read_descriptor(data)
    try:
        spec = NetworkSpec.from_dict(json.loads(descriptor.decode('utf-8')))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"{path}: unreadable network descriptor: {exc}") from exc
    if expected is not None and expected != spec:
        raise CheckpointError(f"{path}: checkpoint spec {spec.to_json()} differs from {expected.to_json()}")
    network = MultiStreamNetwork(spec, init_std=0.0)
    read_parameters(data, offset, network.parameters())
    return network


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    max_steps: Optional[int] = None
    data_dir: Optional[str] = None
    val_dir: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be at least 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValidationError("max_steps must be at least 1")


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    train_mae: float
    steps: int


@dataclass
class TrainResult:
    network: MultiStreamNetwork
    log: List[EpochLog] = field(default_factory=list)
    steps: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(entry) for entry in self.log], columns=['epoch', 'mean_loss', 'train_mae', 'steps'])


Sample = Tuple[np.ndarray, DensityMap]


class Trainer(LoggerMixin):
    """
    End-to-end joint training of all streams with Adam on mini-batches.
    """

    def __init__(self, network: MultiStreamNetwork, cfg: TrainConfig, progress: bool = True):
        self.network = network
        self.cfg = cfg
        self.progress = progress
        self.state = AdamState(learning_rate=cfg.learning_rate)

    def fit(self, data: Sequence[Sample]) -> TrainResult:
        """
        Args:
            data: (normalised image, full-resolution ground-truth map) pairs of equal shape

        Raises:
            NonFiniteLossError: a batch loss is NaN or infinite
        """
        if not data:
            raise ValidationError("training needs at least one sample")
        shapes = {np.shape(image)[-2:] for image, _ in data}
        if len(shapes) != 1:
            raise ShapeError(f"training samples must share one size, got {sorted(shapes)}")
        images = np.stack([_as_input_batch(image, self.network.spec.in_channels)[0] for image, _ in data])
        targets = np.stack([prepare_target(density) for _, density in data])
        counts = targets.sum(axis=(1, 2))
        rng = np.random.default_rng(self.cfg.seed)
        result = TrainResult(self.network)
        batches_per_epoch = math.ceil(len(data) / self.cfg.batch_size)
        self.logger.info(f"Starting training: {len(data)} samples, {batches_per_epoch} batches per epoch, "
                         f"{self.network.parameter_count()} parameters")

        epochs = tqdm(range(1, self.cfg.epochs + 1), desc='epochs', disable=not self.progress)
        for epoch in epochs:
            order = rng.permutation(len(data))
            losses, abs_errors = [], []
            for batch_index in range(batches_per_epoch):
                picked = order[batch_index * self.cfg.batch_size:(batch_index + 1) * self.cfg.batch_size]
                batch_loss = self.network.loss_and_gradients(images[picked], targets[picked])
                if not math.isfinite(batch_loss):
                    raise NonFiniteLossError(epoch, batch_index, batch_loss)
                predicted = np.maximum(self.network.last_output[:, 0], 0.0).sum(axis=(1, 2))
                abs_errors.extend(np.abs(predicted - counts[picked]).tolist())
                losses.append(batch_loss)
                params = self.network.parameters()
                adam_step(params, [p.grad for p in params], self.state)
                result.steps += 1
                if self.cfg.max_steps is not None and result.steps >= self.cfg.max_steps:
                    break
            entry = EpochLog(epoch, float(np.mean(losses)), float(np.mean(abs_errors)), result.steps)
            result.log.append(entry)
            self.logger.debug(f"epoch {epoch}: loss {entry.mean_loss:.6g}, train MAE {entry.train_mae:.4g}")
            epochs.set_postfix(loss=f"{entry.mean_loss:.4g}")
            if self.cfg.max_steps is not None and result.steps >= self.cfg.max_steps:
                self.logger.info(f"Reached the step budget of {self.cfg.max_steps}")
                break
        self.logger.info(f"Training completed after {result.steps} steps")
        return result


@timer
def train(network: MultiStreamNetwork, data: Sequence[Sample], cfg: TrainConfig,
          progress: bool = True) -> TrainResult:
    """Train `network` in place and return it with its per-epoch log."""
    return Trainer(network, cfg, progress=progress).fit(data)

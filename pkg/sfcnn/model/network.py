"""
Forward and backward passes of the convolutional sales network.

A batch of Data Frames (B, K_0, d, T) flows through `arch.orders` conv blocks
 (sum of depthwise wide convolutions over the input maps, ReLU, max-pooling),
 is flattened in (map, row, column) order, optionally dropped out, projected by
 the dense matrix with a ReLU and regressed with the head vector (bias first).
"""
import typing as ty
from dataclasses import dataclass, field

import numpy as np

from sfcnn.errors import ShapeMismatchError
from sfcnn.ingest import DataFrame
from sfcnn.model.architecture import Architecture
from sfcnn.numops import (
    DTYPE,
    conv_maps,
    conv_maps_backward,
    maxpool_argmax,
    maxpool_backward,
    maxpool_rows,
    relu,
    relu_backward,
)

Mode = ty.Literal["train", "eval"]


@dataclass
class ModelParams:
    """All learnable tensors, keyed by name in `arch.tensor_shapes()` order."""

    arch: Architecture
    tensors: ty.Dict[str, np.ndarray]

    def __post_init__(self) -> None:
        shapes = self.arch.tensor_shapes()
        if list(self.tensors) != list(shapes):
            raise ShapeMismatchError(
                f"Tensor names {list(self.tensors)} != expected {list(shapes)}"
            )
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(
                    f"Tensor {name} has shape {self.tensors[name].shape}, expected {shape}"
                )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> ty.List[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch, tensors={name: t.copy() for name, t in self.tensors.items()}
        )

    def replace(self, name: str, value: np.ndarray) -> "ModelParams":
        """Shallow copy with one tensor swapped."""
        tensors = dict(self.tensors)
        tensors[name] = np.asarray(value, dtype=DTYPE).reshape(self.tensors[name].shape)
        return ModelParams(arch=self.arch, tensors=tensors)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    @classmethod
    def from_flat(cls, arch: Architecture, vector: np.ndarray) -> "ModelParams":
        tensors = {}
        offset = 0
        for name, shape in arch.tensor_shapes().items():
            size = int(np.prod(shape))
            tensors[name] = np.asarray(vector[offset : offset + size], dtype=DTYPE).reshape(shape)
            offset += size
        if offset != len(vector):
            raise ShapeMismatchError(f"Flat vector has {len(vector)} entries, expected {offset}")
        return cls(arch=arch, tensors=tensors)

    @classmethod
    def zeros(cls, arch: Architecture) -> "ModelParams":
        return cls(
            arch=arch,
            tensors={name: np.zeros(shape, dtype=DTYPE) for name, shape in arch.tensor_shapes().items()},
        )


@dataclass
class ForwardTrace:
    """Intermediates of one train-mode forward pass, consumed by `backward`."""

    arch: Architecture
    inputs: ty.List[np.ndarray] = field(default_factory=list)  # P^{i-1} per order
    pre_activations: ty.List[np.ndarray] = field(default_factory=list)  # conv sums
    activations: ty.List[np.ndarray] = field(default_factory=list)  # after ReLU
    flat: ty.Optional[np.ndarray] = None  # p
    mask: ty.Optional[np.ndarray] = None  # 0 or 1 / (1 - rate); None without dropout
    dropped: ty.Optional[np.ndarray] = None  # p after dropout
    dense_pre: ty.Optional[np.ndarray] = None  # p^T H
    features: ty.Optional[np.ndarray] = None  # x_hat
    predictions: ty.Optional[np.ndarray] = None

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]

    def pattern(self) -> bytes:
        """Signature of every ReLU sign and pooling arg-max; equal patterns mean the
        network is linear in each single parameter between the two points."""
        parts = []
        for order, (pre, act) in enumerate(zip(self.pre_activations, self.activations)):
            parts.append(np.packbits(pre > 0).tobytes())
            parts.append(maxpool_argmax(act, self.arch.pool_sizes[order]).astype(np.int64).tobytes())
        parts.append(np.packbits(self.dense_pre > 0).tobytes())
        return b"|".join(parts)


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """
    Glorot-uniform filters and dense matrix, zero biases and head.

    Conv filters count fan-in as K_in * m and fan-out as K_out * m.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.tensor_shapes().items():
        if name.endswith(".filters"):
            k_out, k_in, _, m = shape
            limit = np.sqrt(6.0 / (k_in * m + k_out * m))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        elif name == "dense":
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        else:
            tensors[name] = np.zeros(shape, dtype=DTYPE)
    return ModelParams(arch=arch, tensors=tensors)


def _conv_block(
    x: np.ndarray, params: ModelParams, order: int
) -> ty.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (conv sum, activation, pooled) for 1-based `order`."""
    pre = conv_maps(x, params[f"conv{order}.filters"], params[f"conv{order}.biases"])
    act = relu(pre)
    return pre, act, maxpool_rows(act, params.arch.pool_sizes[order - 1])


def conv_block_forward(
    inputs: ty.Sequence[np.ndarray], order: int, params: ModelParams
) -> ty.List[np.ndarray]:
    """
    One order of multi-map convolution on a single frame's representations.

    :param inputs: K_{i-1} matrices of shape d x L_{i-1}
    :param order: 1-based order index i
    :return: K_i matrices of shape d x ceil((L_{i-1} + m_i - 1) / pool_i)
    """
    shapes = {np.shape(it) for it in inputs}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"Representations differ in shape: {shapes}")
    x = np.stack([np.asarray(it, dtype=DTYPE) for it in inputs])[None]
    if x.shape[1] != params.arch.input_maps(order) or x.shape[2] != params.arch.d:
        raise ShapeMismatchError(
            f"Order {order} expects {params.arch.input_maps(order)} maps of {params.arch.d} rows,"
            f" got {x.shape[1:3]}"
        )
    _, _, pooled = _conv_block(x, params, order)
    return list(pooled[0])


def dropout_mask(rng: np.random.Generator, shape: ty.Tuple[int, ...], rate: float) -> ty.Optional[np.ndarray]:
    """Inverted-dropout multipliers: 0 for dropped entries, 1 / (1 - rate) for kept ones."""
    if rate <= 0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward_batch(
    x: np.ndarray,
    params: ModelParams,
    mode: Mode = "eval",
    rng: ty.Optional[np.random.Generator] = None,
    mask: ty.Optional[np.ndarray] = None,
) -> ty.Tuple[np.ndarray, ty.Optional[ForwardTrace]]:
    """
    Predictions for a (B, K_0, d, T) batch.

    In train mode a dropout mask is drawn from `rng` (or taken from `mask`) and a
     trace is returned; eval mode applies no mask and returns no trace.
    """
    arch = params.arch
    x = np.asarray(x, dtype=DTYPE)
    expected = (arch.num_slots, arch.d, arch.T)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatchError(f"Expected batch of {expected} frames, got {x.shape}")
    train = mode == "train"
    trace = ForwardTrace(arch=arch) if train else None

    rep = x
    for order in range(1, arch.orders + 1):
        pre, act, pooled = _conv_block(rep, params, order)
        if train:
            trace.inputs.append(rep)
            trace.pre_activations.append(pre)
            trace.activations.append(act)
        rep = pooled

    flat = rep.reshape(rep.shape[0], -1)
    dropped = flat
    if train:
        if mask is None:
            if arch.dropout_rate > 0 and rng is None:
                raise ValueError("Train mode with dropout needs an rng or an explicit mask")
            mask = dropout_mask(rng, flat.shape, arch.dropout_rate)
        if mask is not None:
            if mask.shape != flat.shape:
                raise ShapeMismatchError(f"Dropout mask {mask.shape} != flat {flat.shape}")
            dropped = flat * mask

    dense_pre = dropped @ params["dense"]
    features = relu(dense_pre)
    head = params["head"]
    predictions = head[0] + features @ head[1:]

    if train:
        trace.flat = flat
        trace.mask = mask
        trace.dropped = dropped
        trace.dense_pre = dense_pre
        trace.features = features
        trace.predictions = predictions
    return predictions, trace


def forward(
    frame: ty.Union[DataFrame, np.ndarray],
    params: ModelParams,
    mode: Mode = "eval",
    rng: ty.Optional[np.random.Generator] = None,
) -> ty.Tuple[float, ty.Optional[ForwardTrace]]:
    """Single-frame forward pass; accepts a `DataFrame` or a (K_0, d, T) array."""
    values = frame.values if isinstance(frame, DataFrame) else np.asarray(frame, dtype=DTYPE)
    predictions, trace = forward_batch(values[None], params, mode=mode, rng=rng)
    return float(predictions[0]), trace


def _backward(
    trace: ForwardTrace, params: ModelParams, upstream: ty.Union[float, np.ndarray]
) -> ty.Tuple[ModelParams, np.ndarray]:
    arch = params.arch
    if trace.arch != arch or trace.flat is None:
        raise ShapeMismatchError("Trace was not produced by a train-mode forward with these params")
    batch = trace.batch_size
    g = np.broadcast_to(np.asarray(upstream, dtype=DTYPE), (batch,))
    grads: ty.Dict[str, np.ndarray] = {}

    head = params["head"]
    grad_head = np.empty_like(head)
    grad_head[0] = g.sum()
    grad_head[1:] = trace.features.T @ g

    g_dense_pre = relu_backward(trace.dense_pre, g[:, None] * head[None, 1:])
    grad_dense = trace.dropped.T @ g_dense_pre
    g_flat = g_dense_pre @ params["dense"].T
    if trace.mask is not None:
        g_flat = g_flat * trace.mask

    last = trace.activations[-1]
    g_rep = g_flat.reshape(
        last.shape[:-1] + (-(-last.shape[-1] // arch.pool_sizes[-1]),)
    )
    for order in range(arch.orders, 0, -1):
        g_act = maxpool_backward(
            trace.activations[order - 1], arch.pool_sizes[order - 1], g_rep
        )
        g_pre = relu_backward(trace.pre_activations[order - 1], g_act)
        g_rep, grad_filters, grad_biases = conv_maps_backward(
            trace.inputs[order - 1], params[f"conv{order}.filters"], g_pre
        )
        grads[f"conv{order}.filters"] = grad_filters
        grads[f"conv{order}.biases"] = grad_biases

    grads["dense"] = grad_dense
    grads["head"] = grad_head
    ordered = {name: grads[name] for name in arch.tensor_shapes()}
    return ModelParams(arch=arch, tensors=ordered), g_rep


def backward(
    trace: ForwardTrace, params: ModelParams, upstream: ty.Union[float, np.ndarray]
) -> ModelParams:
    """
    Gradients of `sum_b upstream[b] * prediction[b]` for every tensor, honoring the
     dropout mask stored in the trace. A scalar upstream applies to every sample.
    """
    grads, _ = _backward(trace, params, upstream)
    return grads


def backward_with_input(
    trace: ForwardTrace, params: ModelParams, upstream: ty.Union[float, np.ndarray]
) -> ty.Tuple[ModelParams, np.ndarray]:
    """Like `backward`, additionally returning the (B, K_0, d, T) frame gradient."""
    return _backward(trace, params, upstream)


"""Dense autoencoder with hand-written backpropagation.

Parameters live in one flat vector so that federated averaging and the
wire format can treat them as a single array. Layer ``i`` owns a weight
block of shape ``(in, out)`` (row-major) followed by its ``out`` biases.

Checkpoint layout (little-endian)::

    magic "FWTS" | version u16 | layer count u16
    per layer: in u32 | out u32
    all weights/biases as f64, layer order
    CRC32 (u32) of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidArgument, NumericalError

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, None),
}


@dataclass(frozen=True)
class DenseStack:
    """A plain chain of dense layers; the autoencoder is one instance."""

    dims: tuple[tuple[int, int], ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.dims) != len(self.activations) or not self.dims:
            raise InvalidArgument("need one activation per layer and at least one layer")
        for (_, o), (i, _) in zip(self.dims, self.dims[1:]):
            if o != i:
                raise InvalidArgument(f"layer widths do not chain: {self.dims}")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise InvalidArgument(f"unknown activation {a!r}")

    def stack(self) -> "DenseStack":
        return self

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.dims)


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int = 64
    latent_dim: int = 8
    hidden_dims: tuple[int, ...] = (32, 16)
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    latent_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.latent_dim < 1:
            raise InvalidArgument("latent_dim must be >= 1")
        if self.latent_dim >= self.input_dim:
            raise InvalidArgument("latent_dim must be smaller than input_dim")
        if any(h <= 0 for h in self.hidden_dims):
            raise InvalidArgument("hidden widths must be positive")

    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        widths = [self.input_dim, *self.hidden_dims, self.latent_dim, *self.hidden_dims[::-1], self.input_dim]
        return tuple(zip(widths[:-1], widths[1:]))

    def activations(self) -> tuple[str, ...]:
        h = len(self.hidden_dims)
        return (
            (self.hidden_activation,) * h
            + (self.latent_activation,)
            + (self.hidden_activation,) * h
            + (self.output_activation,)
        )

    def stack(self) -> DenseStack:
        return DenseStack(self.layer_dims(), self.activations())

    @property
    def n_params(self) -> int:
        return self.stack().n_params

    @classmethod
    def from_layer_dims(cls, dims: Sequence[tuple[int, int]]) -> "ArchitectureSpec":
        """Recover a symmetric autoencoder spec from a checkpoint layer table."""
        dims = [tuple(d) for d in dims]
        if len(dims) < 2 or len(dims) % 2:
            raise InvalidArgument("autoencoder layer table must have an even number of layers")
        half = len(dims) // 2
        widths = [dims[0][0]] + [o for _, o in dims]
        spec = cls(input_dim=widths[0], latent_dim=widths[half], hidden_dims=tuple(widths[1:half]))
        if spec.layer_dims() != tuple(dims):
            raise InvalidArgument(f"layer table {dims} is not a mirrored autoencoder")
        return spec


@dataclass
class ModelParams:
    values: np.ndarray
    shapes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        self.shapes = tuple((int(i), int(o)) for i, o in self.shapes)
        expected = sum(i * o + o for i, o in self.shapes)
        if self.values.ndim != 1 or self.values.shape[0] != expected:
            raise InvalidArgument(f"flat parameter length {self.values.shape} != {expected}")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat vector, one pair per layer."""
        out = []
        pos = 0
        for i, o in self.shapes:
            W = self.values[pos : pos + i * o].reshape(i, o)
            pos += i * o
            out.append((W, self.values[pos : pos + o]))
            pos += o
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.shapes)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # layer inputs, then the network output last
    shapes: tuple[tuple[int, int], ...]


def init_params(spec, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    stack = spec.stack()
    rng = np.random.default_rng(seed)
    values = np.zeros(stack.n_params)
    params = ModelParams(values, stack.dims)
    for (W, _), (i, o) in zip(params.layers(), stack.dims):
        bound = np.sqrt(6.0 / (i + o))
        W[...] = rng.uniform(-bound, bound, size=(i, o))
    return params


def _check_layout(params: ModelParams, stack: DenseStack) -> None:
    if params.shapes != stack.dims:
        raise InvalidArgument(f"parameter layout {params.shapes} does not match {stack.dims}")


def forward(params: ModelParams, spec, batch) -> tuple[np.ndarray, ForwardCache]:
    stack = spec.stack()
    _check_layout(params, stack)
    X = np.asarray(batch)
    if X.ndim != 2 or X.shape[1] != stack.dims[0][0]:
        raise InvalidArgument(f"batch shape {X.shape} does not match input width {stack.dims[0][0]}")
    acts = [X]
    a = X
    for (W, b), name in zip(params.layers(), stack.activations):
        a = _ACTIVATIONS[name][0](a @ W + b)
        acts.append(a)
    return a, ForwardCache(acts, stack.dims)


def loss_mse(pred, target) -> float:
    """Mean over batch and grid of the squared reconstruction error."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def backward(params: ModelParams, spec, cache: ForwardCache, target) -> np.ndarray:
    """Gradient of ``loss_mse(forward(batch), target)`` in the flat layout."""
    stack = spec.stack()
    _check_layout(params, stack)
    acts = cache.activations
    if cache.shapes != stack.dims or len(acts) != len(stack.dims) + 1:
        raise InvalidArgument("cache was produced by a different architecture")
    target = np.asarray(target)
    out = acts[-1]
    if target.shape != out.shape:
        raise InvalidArgument(f"target shape {target.shape} does not match output {out.shape}")

    grad = np.zeros_like(params.values)
    gparams = ModelParams(grad, params.shapes)
    glayers = gparams.layers()
    layers = params.layers()

    delta = 2.0 * (out - target) / out.size
    for li in range(len(layers) - 1, -1, -1):
        deriv = _ACTIVATIONS[stack.activations[li]][1]
        if deriv is not None:
            delta = delta * deriv(acts[li + 1])
        gW, gb = glayers[li]
        gW[...] = acts[li].T @ delta
        gb[...] = delta.sum(axis=0)
        if li:
            delta = delta @ layers[li][0].T
    return grad


def evaluate_loss(params: ModelParams, spec, X) -> float:
    pred, _ = forward(params, spec, X)
    return loss_mse(pred, X)


def reconstruct(params: ModelParams, spec, X) -> np.ndarray:
    return forward(params, spec, X)[0]


# ---------------------------------------------------------------------------
# Optimizers


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.kind!r}")


def make_optimizer(kind: str, learning_rate: float, n_params: int, **kw) -> OptimizerState:
    return OptimizerState(kind, learning_rate, np.zeros(n_params), np.zeros(n_params), 0, **kw)


def optimizer_step(params: ModelParams, grad, state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    grad = np.asarray(grad)
    if grad.shape != params.values.shape:
        raise InvalidArgument("gradient layout does not match parameters")
    if not np.isfinite(grad).all():
        raise NumericalError("non-finite gradient")
    if state.kind == "sgd":
        return ModelParams(params.values - state.learning_rate * grad, params.shapes), state

    m = state.m if state.m is not None else np.zeros_like(grad)
    v = state.v if state.v is not None else np.zeros_like(grad)
    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    values = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = OptimizerState(
        state.kind, state.learning_rate, m, v, t, state.beta1, state.beta2, state.eps
    )
    return ModelParams(values, params.shapes), new_state


def train_epochs(
    params: ModelParams,
    spec,
    state: OptimizerState,
    data: np.ndarray,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[ModelParams, OptimizerState, float, int]:
    """Shuffled minibatch passes; one optimizer step per batch (last may be short).

    Returns the new params and state, the mean batch loss and the step count.
    """
    if data.shape[0] == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    n = data.shape[0]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[order[start : start + batch_size]]
            pred, cache = forward(params, spec, batch)
            losses.append(loss_mse(pred, batch))
            params, state = optimizer_step(params, backward(params, spec, cache, batch), state)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return params, state, mean_loss, len(losses)


# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"FWTS"
CKPT_VERSION = 1
_CK_HEAD = struct.Struct("<4sHH")
_CK_LAYER = struct.Struct("<II")
_CRC = struct.Struct("<I")


def encode_params(params: ModelParams) -> bytes:
    buf = bytearray(_CK_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(params.shapes)))
    for i, o in params.shapes:
        buf += _CK_LAYER.pack(i, o)
    buf += np.ascontiguousarray(params.values, dtype="<f8").tobytes()
    buf += _CRC.pack(zlib.crc32(buf))
    return bytes(buf)


def decode_params(data: bytes) -> ModelParams:
    data = bytes(data)
    if len(data) < _CK_HEAD.size:
        raise FormatError("checkpoint shorter than header", len(data))
    magic, version, n_layers = _CK_HEAD.unpack_from(data, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    off = _CK_HEAD.size
    if len(data) < off + n_layers * _CK_LAYER.size:
        raise FormatError("truncated layer table", len(data))
    shapes = tuple(_CK_LAYER.unpack_from(data, off + j * _CK_LAYER.size) for j in range(n_layers))
    off += n_layers * _CK_LAYER.size
    count = sum(i * o + o for i, o in shapes)
    end = off + 8 * count
    if len(data) != end + _CRC.size:
        raise FormatError(f"checkpoint length {len(data)} != expected {end + _CRC.size}", min(len(data), end))
    (crc,) = _CRC.unpack_from(data, end)
    if crc != zlib.crc32(data[:end]):
        raise FormatError("checkpoint CRC mismatch", end)
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    return ModelParams(values, shapes)


def save_checkpoint(path, params: ModelParams) -> None:
    Path(path).write_bytes(encode_params(params))


def load_checkpoint(path) -> ModelParams:
    return decode_params(Path(path).read_bytes())

"""Three-layer MLP classifier with hand-derived forward/backward passes.

Architecture: input D -> hidden -> hidden -> 2, leaky-ReLU nonlinearities,
softmax output. Parameters are immutable values; every update returns a new
set, so pre- and post-adaptation versions can coexist during meta-training.
All arithmetic is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import make_rng

DEFAULT_HIDDEN = (256, 128)
NUM_CLASSES = 2
NEGATIVE_SLOPE = 0.01

_PARAM_FIELDS = ("W1", "b1", "W2", "b2", "W3", "b3")
_CKPT_MAGIC = b"MLP3CKPT"


@dataclass(frozen=True)
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return (self.W1.shape[1], self.W2.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_FIELDS}

    def validate(self) -> None:
        h1, h2 = self.hidden_sizes
        expected = {"W1": (self.input_dim, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,),
                    "W3": (h2, NUM_CLASSES), "b3": (NUM_CLASSES,)}
        for name, arr in self.arrays().items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")


# Gradients share the parameter container: same fields, same shapes.
Gradients = ModelParams


def tree_map(fn, *trees: ModelParams) -> ModelParams:
    """Apply ``fn`` leafwise across parameter containers."""
    out = {name: fn(*(getattr(t, name) for t in trees)) for name in _PARAM_FIELDS}
    return ModelParams(seed=trees[0].seed, **out)


def zeros_like_params(params: ModelParams) -> ModelParams:
    return tree_map(np.zeros_like, params)


@dataclass(frozen=True)
class Batch:
    """inputs: [N, D] float64; targets: [N] ints, 0 = non_abusive, 1 = abusive."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty [N, D] matrix")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError("targets must be one label per row")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_params(input_dim: int, seed: int, hidden: tuple[int, int] = DEFAULT_HIDDEN) -> ModelParams:
    """Uniform fan-in initialization scaled for the leaky-ReLU gain; zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = make_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + NEGATIVE_SLOPE ** 2))
    sizes = [input_dim, hidden[0], hidden[1], NUM_CLASSES]
    tensors = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        bound = gain * np.sqrt(6.0 / fan_in)
        tensors[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"b{i}"] = np.zeros(fan_out)
    return ModelParams(seed=seed, **tensors)


def init_weight_bound(fan_in: int) -> float:
    """Half-width of the uniform initialization interval for a given fan-in."""
    return float(np.sqrt(2.0 / (1.0 + NEGATIVE_SLOPE ** 2)) * np.sqrt(6.0 / fan_in))


def _lrelu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, NEGATIVE_SLOPE * z)


def _lrelu_slope(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, NEGATIVE_SLOPE)


@dataclass(frozen=True)
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward(params: ModelParams, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """Return per-row class probabilities plus the activations needed by backward."""
    x = np.asarray(batch.inputs, dtype=np.float64)
    if x.shape[1] != params.input_dim:
        raise ValueError(f"batch dim {x.shape[1]} != model dim {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch inputs contain non-finite entries")
    z1 = x @ params.W1 + params.b1
    h1 = _lrelu(z1)
    z2 = h1 @ params.W2 + params.b2
    h2 = _lrelu(z2)
    logits = h2 @ params.W3 + params.b3
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    return probs, ForwardCache(x=x, z1=z1, h1=h1, z2=z2, h2=h2, logits=logits, probs=probs)


def _cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(targets)), targets]
    return float(np.mean(lse - picked))


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, Gradients]:
    """Mean softmax cross-entropy and its exact gradient by backpropagation."""
    probs, cache = forward(params, batch)
    n = len(batch)
    targets = np.asarray(batch.targets, dtype=np.int64)
    loss = _cross_entropy(cache.logits, targets)

    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n

    dW3 = cache.h2.T @ dlogits
    db3 = dlogits.sum(axis=0)
    dh2 = dlogits @ params.W3.T
    dz2 = dh2 * _lrelu_slope(cache.z2)
    dW2 = cache.h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.W2.T
    dz1 = dh1 * _lrelu_slope(cache.z1)
    dW1 = cache.x.T @ dz1
    db1 = dz1.sum(axis=0)

    grads = ModelParams(W1=dW1, b1=db1, W2=dW2, b2=db2, W3=dW3, b3=db3, seed=params.seed)
    return loss, grads


def apply_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """Functional SGD step: params - lr * grads, as a new value."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    return tree_map(lambda p, g: p - lr * g, params, grads)


def predict(params: ModelParams, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Argmax class per row, evaluated in chunks."""
    out = []
    for start in range(0, inputs.shape[0], batch_size):
        chunk = inputs[start:start + batch_size]
        probs, _ = forward(params, Batch(inputs=chunk, targets=np.zeros(len(chunk), dtype=np.int64)))
        out.append(probs.argmax(axis=1))
    return np.concatenate(out)


def save_params(params: ModelParams, path: str | Path) -> None:
    """Binary checkpoint: header (dims, seed) + float64 tensors in declaration order."""
    params.validate()
    h1, h2 = params.hidden_sizes
    header = struct.pack("<8sIIIIIQ", _CKPT_MAGIC, 1, params.input_dim, h1, h2,
                         NUM_CLASSES, params.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in params.arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<8sIIIIIQ"))
        magic, version, dim, h1, h2, out, seed = struct.unpack("<8sIIIIIQ", head)
        if magic != _CKPT_MAGIC or version != 1:
            raise ValueError(f"not a recognized checkpoint: {path}")
        if out != NUM_CLASSES:
            raise ValueError(f"checkpoint has {out} outputs, expected {NUM_CLASSES}")
        shapes = {"W1": (dim, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,),
                  "W3": (h2, out), "b3": (out,)}
        tensors = {}
        for name, shape in shapes.items():
            count = int(np.prod(shape))
            raw = np.frombuffer(fh.read(count * 8), dtype="<f8")
            if raw.size != count:
                raise ValueError(f"checkpoint truncated while reading {name}")
            tensors[name] = raw.reshape(shape).astype(np.float64)
    params = ModelParams(seed=seed, **tensors)
    params.validate()
    return params

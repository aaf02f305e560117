"""Small convolutional classifiers over the probability simplex.

The architecture is deliberately modest: a few same-padded conv blocks,
each followed by stride-2 max pooling (expressed as strided slices and
elementwise maxima, so it differentiates cleanly), one hidden dense
layer, and a softmax head. Cross-entropy is computed from log-softmax
with the max subtracted, so the loss never evaluates log(0).

Checkpoints are a small binary format (magic "RGRD"): a JSON header
describing the architecture, then each parameter as name, rank, dims,
and raw 64-bit little-endian floats.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from regiongrad.tensor import (
    ShapeError,
    Tensor,
    amax,
    conv2d,
    exp,
    log,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    softplus,
    stop_gradient,
    sub,
    tensor,
    tsum,
)

__all__ = [
    "ArchConfig",
    "ModelParams",
    "init_model",
    "param_count",
    "forward",
    "logits",
    "log_probs",
    "cross_entropy",
    "save_model",
    "load_model",
    "CHECKPOINT_MAGIC",
]

_ACTIVATIONS = {"relu": relu, "softplus": softplus}

CHECKPOINT_MAGIC = b"RGRD"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the classifier: input, conv blocks, dense widths, classes.

    Each conv block is (out_channels, kernel_size, activation) with 'same'
    padding and a stride-2 max pool after the activation.
    """

    input_shape: Tuple[int, int, int]  # (channels, height, width)
    conv_blocks: Tuple[Tuple[int, int, str], ...] = ((8, 3, "relu"), (16, 3, "relu"))
    hidden: int = 64
    classes: int = 4
    dense_activation: str = "relu"

    def validate(self) -> None:
        c, h, w = self.input_shape
        if min(c, h, w) < 1:
            raise ValueError(f"input shape must be positive, got {self.input_shape}")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.hidden < 1:
            raise ValueError(f"hidden width must be positive, got {self.hidden}")
        if self.dense_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.dense_activation!r}")
        for i, (co, k, act) in enumerate(self.conv_blocks):
            if co < 1:
                raise ValueError(f"block {i}: out_channels must be positive, got {co}")
            if k < 1 or k % 2 == 0:
                raise ValueError(f"block {i}: kernel size must be odd, got {k}")
            if act not in _ACTIVATIONS:
                raise ValueError(f"block {i}: unknown activation {act!r}")
        if min(self._spatial_after_blocks()) < 1:
            raise ValueError("pooling collapses the image to nothing; fewer blocks or larger input")

    def _spatial_after_blocks(self) -> Tuple[int, int]:
        _, h, w = self.input_shape
        for _ in self.conv_blocks:
            h, w = h // 2, w // 2
        return h, w

    def flat_features(self) -> int:
        h, w = self._spatial_after_blocks()
        c = self.conv_blocks[-1][0] if self.conv_blocks else self.input_shape[0]
        return c * h * w

    def param_shapes(self) -> "list[tuple[str, tuple]]":
        shapes = []
        ci = self.input_shape[0]
        for i, (co, k, _) in enumerate(self.conv_blocks):
            shapes.append((f"conv{i}.w", (co, ci, k, k)))
            shapes.append((f"conv{i}.b", (co,)))
            ci = co
        shapes.append(("dense.w", (self.flat_features(), self.hidden)))
        shapes.append(("dense.b", (self.hidden,)))
        shapes.append(("out.w", (self.hidden, self.classes)))
        shapes.append(("out.b", (self.classes,)))
        return shapes

    def to_json_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_blocks": [list(b) for b in self.conv_blocks],
            "hidden": self.hidden,
            "classes": self.classes,
            "dense_activation": self.dense_activation,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ArchConfig":
        return ArchConfig(
            input_shape=tuple(d["input_shape"]),
            conv_blocks=tuple((int(c), int(k), str(a)) for c, k, a in d["conv_blocks"]),
            hidden=int(d["hidden"]),
            classes=int(d["classes"]),
            dense_activation=str(d["dense_activation"]),
        )


def param_count(arch: ArchConfig) -> int:
    """Total scalar parameters implied by the architecture alone."""
    return sum(int(np.prod(s)) for _, s in arch.param_shapes())


class ModelParams:
    """Ordered named parameter tensors plus the architecture they fit.

    Value-like: operations that change parameters return a new instance.
    """

    __slots__ = ("arch", "_names", "_tensors", "rng_seed")

    def __init__(self, arch: ArchConfig, named, rng_seed: Optional[int] = None):
        self.arch = arch
        named = list(named)
        self._names = tuple(n for n, _ in named)
        self._tensors = {n: t for n, t in named}
        self.rng_seed = rng_seed
        expected = dict(arch.param_shapes())
        for n, t in self._tensors.items():
            if n not in expected or tuple(t.shape) != expected[n]:
                raise ValueError(f"parameter {n!r} has shape {t.shape}, architecture wants {expected.get(n)}")
        if set(self._names) != set(expected):
            missing = sorted(set(expected) - set(self._names))
            raise ValueError(f"missing parameters: {missing}")

    @property
    def names(self) -> tuple:
        return self._names

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return ((n, self._tensors[n]) for n in self._names)

    def tensors(self) -> "list[Tensor]":
        return [self._tensors[n] for n in self._names]

    def replace(self, updates: dict) -> "ModelParams":
        """New instance with some tensors swapped out (used by the optimizer)."""
        unknown = set(updates) - set(self._names)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        named = [(n, updates.get(n, self._tensors[n])) for n in self._names]
        return ModelParams(self.arch, named, rng_seed=self.rng_seed)

    def clone(self) -> "ModelParams":
        named = [(n, Tensor(t.data.copy(), requires_grad=True)) for n, t in self.items()]
        return ModelParams(self.arch, named, rng_seed=self.rng_seed)

    def param_count(self) -> int:
        return sum(t.size for t in self._tensors.values())


def init_model(arch: ArchConfig, seed: int) -> ModelParams:
    """He-scaled random weights (std √(2/fan_in)), zero biases."""
    arch.validate()
    rng = np.random.default_rng(seed)
    named = []
    for name, shape in arch.param_shapes():
        if name.endswith(".b"):
            named.append((name, Tensor(np.zeros(shape), requires_grad=True)))
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            scale = np.sqrt(2.0 / fan_in)
            named.append((name, Tensor(rng.standard_normal(shape) * scale, requires_grad=True)))
    return ModelParams(arch, named, rng_seed=seed)


def _maximum(a: Tensor, b: Tensor) -> Tensor:
    # elementwise max; ties resolve toward a (relu subgradient at 0 is 0)
    return a + relu(sub(b, a))


def _pool2(h: Tensor) -> Tensor:
    """Stride-2 max pooling over 2x2 windows via strided slices."""
    _, _, height, width = h.shape
    if height % 2:
        h = h[:, :, : height - 1, :]
    if width % 2:
        h = h[:, :, :, : width - 1]
    nw = _maximum(h[:, :, 0::2, 0::2], h[:, :, 0::2, 1::2])
    sw = _maximum(h[:, :, 1::2, 0::2], h[:, :, 1::2, 1::2])
    return _maximum(nw, sw)


def _as_batch(arch: ArchConfig, x) -> Tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else tensor(x)
    if x.ndim == 3:
        batched = False
        xb = reshape(x, (1,) + tuple(x.shape))
    elif x.ndim == 4:
        batched = True
        xb = x
    else:
        raise ShapeError("forward", x.shape, detail="expects (C,H,W) or (B,C,H,W)")
    if tuple(xb.shape[1:]) != tuple(arch.input_shape):
        raise ShapeError("forward", xb.shape, arch.input_shape, detail="input does not match architecture")
    return xb, batched


def logits(model: ModelParams, x) -> Tensor:
    """Raw class scores, shape (B, K) (singleton batch added if needed)."""
    xb, _ = _as_batch(model.arch, x)
    h = xb
    for i, (_, _, act) in enumerate(model.arch.conv_blocks):
        w, b = model[f"conv{i}.w"], model[f"conv{i}.b"]
        h = conv2d(h, w, padding="same") + reshape(b, (1, -1, 1, 1))
        h = _ACTIVATIONS[act](h)
        h = _pool2(h)
    h = reshape(h, (h.shape[0], model.arch.flat_features()))
    h = _ACTIVATIONS[model.arch.dense_activation](matmul(h, model["dense.w"]) + model["dense.b"])
    return matmul(h, model["out.w"]) + model["out.b"]


def log_probs(model: ModelParams, x) -> Tensor:
    """Log-softmax of the logits, shape (B, K); stable via detached max."""
    z = logits(model, x)
    m = stop_gradient(amax(z, axis=1, keepdims=True))
    zs = sub(z, m)
    lse = log(tsum(exp(zs), axis=1, keepdims=True))
    return sub(zs, lse)


def forward(model: ModelParams, x) -> Tensor:
    """Class probabilities; (K,) for a single image, (B, K) for a batch."""
    batched = (x if isinstance(x, Tensor) else np.asarray(x)).ndim == 4
    probs = exp(log_probs(model, x))
    if not batched:
        probs = reshape(probs, (model.arch.classes,))
    return probs


def cross_entropy(probs: Tensor, y: int) -> Tensor:
    """-ln(probs[y]) for a single probability vector."""
    probs = probs if isinstance(probs, Tensor) else tensor(probs)
    if probs.ndim != 1:
        raise ShapeError("cross_entropy", probs.shape, detail="expects a 1-d probability vector")
    k = probs.shape[0]
    y = int(y)
    if not 0 <= y < k:
        raise ValueError(f"label {y} out of range for {k} classes")
    return neg(log(probs[y]))


def batch_cross_entropy(model: ModelParams, images: Tensor, labels: np.ndarray) -> Tensor:
    """Per-example cross-entropy vector, shape (B,), via the stable path."""
    lp = log_probs(model, images)
    b, k = lp.shape
    onehot = np.zeros((b, k))
    onehot[np.arange(b), np.asarray(labels, dtype=int)] = 1.0
    return neg(tsum(mul(lp, tensor(onehot)), axis=1))


def predict(model: ModelParams, images) -> np.ndarray:
    """Argmax class per example (first index wins ties); shape (B,)."""
    z = logits(model, images)
    return np.argmax(z.data, axis=1)


# ----------------------------------------------------------- checkpoint I/O


def save_model(model: ModelParams, path) -> None:
    header = model.arch.to_json_dict()
    header["rng_seed"] = model.rng_seed
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", _CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, t in model.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            f.write(struct.pack("<Q", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("checkpoint truncated")
    return buf


def load_model(path) -> ModelParams:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        header = json.loads(_read_exact(f, hlen).decode("utf-8"))
        arch = ArchConfig.from_json_dict(header)
        named = []
        while True:
            sz = f.read(8)
            if not sz:
                break
            (nlen,) = struct.unpack("<Q", sz)
            name = _read_exact(f, nlen).decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(f, 8))
            dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").reshape(dims)
            named.append((name, Tensor(data.copy(), requires_grad=True)))
    return ModelParams(arch, named, rng_seed=header.get("rng_seed"))

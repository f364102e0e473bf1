"""Small classifiers with hand-written forward and backward passes.

Three architectures are supported:

``linear``
    logits = W^T vec(x) + b
``mlp-1-hidden``
    dense(64) -> ReLU -> dense
``conv-small``
    conv 3x3 (8 channels, zero padding) -> ReLU -> 2x2 max-pool -> dense

Every function accepts a single image (H, W, C) or a batch (B, H, W, C).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Xoshiro256
from .tensor import as_tensor

ARCHITECTURES = ("linear", "mlp-1-hidden", "conv-small")
HIDDEN = 64
CONV_CHANNELS = 8
CHECKPOINT_MAGIC = b"GRCM"
CHECKPOINT_VERSION = 1


@dataclass
class ClassifierParams:
    architecture: str
    input_shape: tuple[int, int, int]
    num_classes: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        self.input_shape = tuple(int(d) for d in self.input_shape)
        expected = layer_shapes(self.architecture, self.input_shape, self.num_classes)
        for name, shape in expected.items():
            if name in self.weights and self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, expected {shape}")

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.architecture,
            self.input_shape,
            self.num_classes,
            {k: v.copy() for k, v in self.weights.items()},
        )


def layer_shapes(architecture: str, input_shape, num_classes: int) -> dict[str, tuple[int, ...]]:
    h, w, c = input_shape
    n = h * w * c
    if architecture == "linear":
        return {"W": (n, num_classes), "b": (num_classes,)}
    if architecture == "mlp-1-hidden":
        return {
            "W1": (n, HIDDEN),
            "b1": (HIDDEN,),
            "W2": (HIDDEN, num_classes),
            "b2": (num_classes,),
        }
    if architecture == "conv-small":
        if h < 2 or w < 2:
            raise ValueError("conv-small needs images of at least 2x2")
        pooled = (h // 2) * (w // 2) * CONV_CHANNELS
        return {
            "K": (c * 9, CONV_CHANNELS),
            "bk": (CONV_CHANNELS,),
            "W": (pooled, num_classes),
            "b": (num_classes,),
        }
    raise ValueError(f"unknown architecture {architecture!r}")


def init_params(architecture: str, input_shape, num_classes: int, seed: int = 0) -> ClassifierParams:
    """He-uniform weights from a xoshiro stream, zero biases."""
    rng = Xoshiro256(seed)
    weights = {}
    for name, shape in layer_shapes(architecture, input_shape, num_classes).items():
        if len(shape) == 1:
            weights[name] = np.zeros(shape)
            continue
        limit = np.sqrt(6.0 / shape[0])
        weights[name] = (2.0 * rng.uniform_array(int(np.prod(shape))) - 1.0).reshape(shape) * limit
    return ClassifierParams(architecture, tuple(input_shape), num_classes, weights)


def _as_batch(params: ClassifierParams, x) -> tuple[np.ndarray, bool]:
    x = as_tensor(x, name="input")
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != params.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model input {params.input_shape}")
    return x, single


def _conv_cols(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    return sliding_window_view(padded, (3, 3), axis=(1, 2)).reshape(b * h * w, c * 9)


def _forward(params: ClassifierParams, x: np.ndarray):
    """Logits plus the cache needed by :func:`_backward`."""
    p = params.weights
    b = x.shape[0]
    if params.architecture == "linear":
        flat = x.reshape(b, -1)
        return flat @ p["W"] + p["b"], (flat,)
    if params.architecture == "mlp-1-hidden":
        flat = x.reshape(b, -1)
        z = flat @ p["W1"] + p["b1"]
        a = np.maximum(z, 0.0)
        return a @ p["W2"] + p["b2"], (flat, z, a)
    h, w, _ = params.input_shape
    cols = _conv_cols(x)
    z = (cols @ p["K"] + p["bk"]).reshape(b, h, w, CONV_CHANNELS)
    a = np.maximum(z, 0.0)
    h2, w2 = h // 2, w // 2
    windows = (
        a[:, : 2 * h2, : 2 * w2, :]
        .reshape(b, h2, 2, w2, 2, CONV_CHANNELS)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, h2, w2, CONV_CHANNELS, 4)
    )
    arg = np.argmax(windows, axis=-1)  # first occurrence on ties
    pooled = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    flat = pooled.reshape(b, -1)
    return flat @ p["W"] + p["b"], (cols, z, arg, flat)


def forward(params: ClassifierParams, x) -> np.ndarray:
    x, single = _as_batch(params, x)
    logits, _ = _forward(params, x)
    return logits[0] if single else logits


def predict(params: ClassifierParams, x) -> np.ndarray | int:
    logits = forward(params, x)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _backward(params: ClassifierParams, x: np.ndarray, cache, dlogits: np.ndarray, need_params: bool):
    p = params.weights
    b = x.shape[0]
    grads = {}
    if params.architecture == "linear":
        (flat,) = cache
        if need_params:
            grads = {"W": flat.T @ dlogits, "b": dlogits.sum(axis=0)}
        return (dlogits @ p["W"].T).reshape(x.shape), grads
    if params.architecture == "mlp-1-hidden":
        flat, z, a = cache
        da = dlogits @ p["W2"].T
        dz = da * (z > 0.0)
        if need_params:
            grads = {
                "W1": flat.T @ dz,
                "b1": dz.sum(axis=0),
                "W2": a.T @ dlogits,
                "b2": dlogits.sum(axis=0),
            }
        return (dz @ p["W1"].T).reshape(x.shape), grads

    cols, z, arg, flat = cache
    h, w, c = params.input_shape
    h2, w2 = h // 2, w // 2
    dpooled = (dlogits @ p["W"].T).reshape(b, h2, w2, CONV_CHANNELS)
    dwindows = np.zeros((b, h2, w2, CONV_CHANNELS, 4))
    np.put_along_axis(dwindows, arg[..., None], dpooled[..., None], axis=-1)
    da = np.zeros((b, h, w, CONV_CHANNELS))
    da[:, : 2 * h2, : 2 * w2, :] = (
        dwindows.reshape(b, h2, w2, CONV_CHANNELS, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, 2 * h2, 2 * w2, CONV_CHANNELS)
    )
    dz = (da * (z > 0.0)).reshape(b * h * w, CONV_CHANNELS)
    if need_params:
        grads = {
            "K": cols.T @ dz,
            "bk": dz.sum(axis=0),
            "W": flat.T @ dlogits,
            "b": dlogits.sum(axis=0),
        }
    dcols = (dz @ p["K"].T).reshape(b, h, w, c, 3, 3)
    dpad = np.zeros((b, h + 2, w + 2, c))
    for i in range(3):
        for j in range(3):
            dpad[:, i : i + h, j : j + w, :] += dcols[..., i, j]
    return dpad[:, 1 : h + 1, 1 : w + 1, :], grads


def _check_labels(params: ClassifierParams, y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= params.num_classes):
        raise ValueError(f"labels must be integers in [0, {params.num_classes}), got {y}")
    return y.astype(np.int64)


@dataclass
class Gradients:
    losses: np.ndarray  # per-sample cross-entropy
    inputs: np.ndarray  # d loss_i / d x_i, shaped like the batch
    params: dict[str, np.ndarray]  # gradient of the mean loss


def backprop(params: ClassifierParams, x, y, *, need_params: bool = True) -> Gradients:
    x, _ = _as_batch(params, x)
    y = _check_labels(params, y)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    logits, cache = _forward(params, x)
    logp = log_softmax(logits)
    rows = np.arange(x.shape[0])
    losses = -logp[rows, y]
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dx, _ = _backward(params, x, cache, dlogits, need_params=False)
    grads = {}
    if need_params:
        _, grads = _backward(params, x, cache, dlogits / x.shape[0], need_params=True)
    return Gradients(losses=losses, inputs=dx, params=grads)


def loss_and_input_grad(params: ClassifierParams, x, y) -> tuple[float, np.ndarray]:
    """Cross-entropy at label ``y`` and its gradient with respect to the image."""
    x = as_tensor(x, name="input")
    g = backprop(params, x[None] if x.ndim == 3 else x, [y] if np.ndim(y) == 0 else y, need_params=False)
    if x.ndim == 3:
        return float(g.losses[0]), g.inputs[0]
    return g.losses, g.inputs


def loss(params: ClassifierParams, x, y) -> float:
    x, single = _as_batch(params, x)
    y = _check_labels(params, y)
    logits, _ = _forward(params, x)
    losses = -log_softmax(logits)[np.arange(x.shape[0]), y]
    return float(losses[0]) if single else losses


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 20
    batch: int = 32
    seed: int = 0


def train_sgd(params: ClassifierParams, images, labels, config: TrainConfig = TrainConfig()):
    """Minibatch SGD on the mean cross-entropy.

    Returns ``(trained_params, epoch_losses)``; the input params are not modified.
    Shuffling uses a xoshiro stream seeded by ``config.seed``.
    """
    images = as_tensor(images, name="images")
    labels = _check_labels(params, labels) if len(labels) else np.zeros(0, dtype=np.int64)
    if images.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    params = params.copy()
    rng = Xoshiro256(config.seed)
    n = images.shape[0]
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            g = backprop(params, images[idx], labels[idx])
            total += float(g.losses.sum())
            if config.lr != 0.0:
                for name, grad in g.params.items():
                    params.weights[name] -= config.lr * grad
        trace.append(total / n)
    return params, np.array(trace)


def accuracy(params: ClassifierParams, images, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predict(params, images) == labels))


def save_checkpoint(path, params: ClassifierParams, seed: int | None = None) -> None:
    """Write ``GRCM`` + u32 header length + JSON header + little-endian float64 payload."""
    names = list(layer_shapes(params.architecture, params.input_shape, params.num_classes))
    header = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": params.architecture,
        "input_shape": list(params.input_shape),
        "num_classes": params.num_classes,
        "seed": seed,
        "tensors": [{"name": n, "shape": list(params.weights[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.weights[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ClassifierParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic {raw[:4]!r})")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    offset = 8 + hlen
    weights = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        end = offset + 8 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated payload in tensor {t['name']}")
        weights[t["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(t["shape"])
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    params = ClassifierParams(header["architecture"], tuple(header["input_shape"]), header["num_classes"], weights)
    return params, header

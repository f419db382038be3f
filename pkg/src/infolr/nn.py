"""Dense feed-forward classifier trained with mini-batch SGD.

Hidden layers use a rectifier or tanh; the output layer emits logits and the
loss is softmax cross-entropy. Each weight/bias pair is one "layer" for
layer-wise learning rates.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = b"INFOLRCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.layer_sizes[-1] < 2:
            raise ValueError("need at least two output classes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    nesterov: bool = True
    batch_size: int = 128

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class Network:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    vel_w: list[np.ndarray] = field(default_factory=list)
    vel_b: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.vel_w:
            self.vel_w = [np.zeros_like(w) for w in self.weights]
            self.vel_b = [np.zeros_like(b) for b in self.biases]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_classes(self) -> int:
        return self.spec.layer_sizes[-1]


def init_network(spec: NetworkSpec) -> Network:
    """Fan-in scaled normal weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    gain = 2.0 if spec.activation == "relu" else 1.0
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.layer_sizes[0]:
        raise ValueError(f"expected input of width {net.spec.layer_sizes[0]}, got shape {x.shape}")
    return x


def forward(net: Network, batch, capture: bool = False):
    """Return ``(logits, activations)``.

    ``activations`` is None unless ``capture`` is set; then it lists the
    post-activation output of every hidden layer followed by the softmax
    probabilities of the output layer.
    """
    h = _check_input(net, batch)
    acts = [] if capture else None
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if i == last:
            if capture:
                acts.append(softmax(z))
            return z, acts
        h = _act(z, net.spec.activation)
        if capture:
            acts.append(h)
    raise AssertionError("unreachable")


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    losses = log_norm - z[np.arange(len(labels)), labels]
    return float(losses.mean()), losses


def _check_labels(net: Network, labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= net.n_classes):
        raise ValueError(f"labels must lie in [0, {net.n_classes})")
    return labels


def loss_and_grad(net: Network, batch_x, batch_labels):
    """Mean cross-entropy and its gradients as a list of ``(dW, db)`` pairs."""
    x = _check_input(net, batch_x)
    labels = _check_labels(net, batch_labels, x.shape[0])
    n = x.shape[0]

    inputs, pre = [], []
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if i < net.n_layers - 1:
            h = _act(z, net.spec.activation)
    loss, _ = _cross_entropy(pre[-1], labels)

    delta = softmax(pre[-1])
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        grads[i] = (inputs[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ net.weights[i].T
            if net.spec.activation == "relu":
                delta = delta * (pre[i - 1] > 0)
            else:
                delta = delta * (1.0 - inputs[i] ** 2)
    return loss, grads


def sgd_step(net: Network, grads, lr_per_layer, cfg: OptimizerConfig) -> Network:
    """In-place momentum SGD update; returns ``net``.

    A single learning rate applies to every layer.
    """
    lrs = [float(v) for v in np.atleast_1d(lr_per_layer)]
    if len(lrs) == 1:
        lrs = lrs * net.n_layers
    if len(lrs) != net.n_layers:
        raise ValueError(f"got {len(lrs)} learning rates for {net.n_layers} layers")
    mu = cfg.momentum
    for i, (gw, gb) in enumerate(grads):
        lr = lrs[i]
        for param, vel, g in ((net.weights[i], net.vel_w[i], gw), (net.biases[i], net.vel_b[i], gb)):
            vel *= mu
            vel -= lr * g
            if cfg.nesterov:
                param += mu * vel - lr * g
            else:
                param += vel
    return net


def shuffle_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 7]).permutation(n)


def train_epoch(net: Network, x, labels, lr_per_layer, cfg: OptimizerConfig, seed: int, epoch: int) -> float:
    """One pass over shuffled mini-batches; returns the mean batch loss."""
    order = shuffle_order(len(labels), seed, epoch)
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        loss, grads = loss_and_grad(net, x[idx], labels[idx])
        sgd_step(net, grads, lr_per_layer, cfg)
        losses.append(loss)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss diverged in epoch {epoch}")
    return float(np.mean(losses))


def evaluate(net: Network, x, labels, batch_size: int = 4096) -> tuple[float, float]:
    """Accuracy of the logits' argmax and mean cross-entropy."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    labels = _check_labels(net, labels, x.shape[0])
    correct, total_loss = 0, 0.0
    for start in range(0, x.shape[0], batch_size):
        logits, _ = forward(net, x[start : start + batch_size])
        lab = labels[start : start + batch_size]
        correct += int((logits.argmax(axis=1) == lab).sum())
        total_loss += _cross_entropy(logits, lab)[1].sum()
    return correct / x.shape[0], total_loss / x.shape[0]


# -- checkpoints ---------------------------------------------------------------
#
# Layout: magic, u32 version, u64 header length, UTF-8 JSON header, payload.
# The payload is every array as little-endian float64 in header order; the
# header carries a SHA-256 of the payload.


def _arrays(net: Network):
    for kind in ("weights", "biases", "vel_w", "vel_b"):
        for i, a in enumerate(getattr(net, kind)):
            yield f"{kind}.{i}", a


def save_checkpoint(path, net: Network, cfg: OptimizerConfig, epoch: int, extra: dict | None = None) -> None:
    manifest, chunks = [], []
    for name, a in _arrays(net):
        manifest.append({"name": name, "shape": list(a.shape)})
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    header = {
        "spec": asdict(net.spec),
        "optimizer": asdict(cfg),
        "epoch": int(epoch),
        "arrays": manifest,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


@dataclass
class Checkpoint:
    net: Network
    optimizer: OptimizerConfig
    epoch: int
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[20 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")

    spec = NetworkSpec(**header["spec"])
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(entry["shape"]).astype(np.float64)
        )
        offset += 8 * count
    n = len(spec.layer_sizes) - 1
    net = Network(
        spec,
        weights=[arrays[f"weights.{i}"] for i in range(n)],
        biases=[arrays[f"biases.{i}"] for i in range(n)],
        vel_w=[arrays[f"vel_w.{i}"] for i in range(n)],
        vel_b=[arrays[f"vel_b.{i}"] for i in range(n)],
    )
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        if net.weights[i].shape != (fan_in, fan_out):
            raise CheckpointError(f"{path}: layer {i} shape does not match the stored spec")
    return Checkpoint(net, OptimizerConfig(**header["optimizer"]), header["epoch"], header["extra"])

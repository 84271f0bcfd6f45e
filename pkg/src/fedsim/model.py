"""Fully connected classifier with manual backprop, stored as a flat vector.

The network is input -> hidden... -> softmax with cross-entropy loss.
Parameters for layer l occupy a contiguous slice of the flat vector:
weight matrix (in x out, row-major) followed by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors import ParamVector, RngStream, check_finite

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input, hidden..., output) plus the hidden activation."""

    layer_widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("all layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")

    @property
    def param_count(self) -> int:
        widths = self.layer_widths
        return sum(i * o + o for i, o in zip(widths[:-1], widths[1:]))

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class Batch:
    """A block of examples: features (N x d) and integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


def _unpack(spec: MlpSpec, params: ParamVector):
    """Split the flat vector into (W, b) pairs; views, no copies."""
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"params length {params.shape} does not match spec ({spec.param_count},)"
        )
    layers = []
    off = 0
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off : off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: MlpSpec, stream: RngStream) -> ParamVector:
    """Fan-in-scaled uniform weights in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases."""
    out = np.empty(spec.param_count)
    off = 0
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        out[off : off + fan_in * fan_out] = stream.uniform(-lim, lim, fan_in * fan_out)
        off += fan_in * fan_out
        out[off : off + fan_out] = 0.0
        off += fan_out
    return out


def _check_batch(spec: MlpSpec, batch: Batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    if batch.features.shape[1] != spec.layer_widths[0]:
        raise ValueError(
            f"feature width {batch.features.shape[1]} != input width {spec.layer_widths[0]}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes:
        raise ValueError("label out of range")


def _forward(spec: MlpSpec, params: ParamVector, x: np.ndarray):
    """Return (logits, per-layer post-activation list including the input)."""
    layers = _unpack(spec, params)
    acts = [x]
    a = x
    for w, b in layers[:-1]:
        z = a @ w + b
        a = np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)
        acts.append(a)
    w, b = layers[-1]
    logits = a @ w + b
    return logits, acts


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(spec: MlpSpec, params: ParamVector, batch: Batch) -> float:
    """Mean cross-entropy over the batch (stable log-softmax)."""
    _check_batch(spec, batch)
    logits, _ = _forward(spec, params, batch.features)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def backward_grad(spec: MlpSpec, params: ParamVector, batch: Batch) -> ParamVector:
    """Gradient of forward_loss w.r.t. params, same flat layout."""
    _check_batch(spec, batch)
    n = len(batch)
    logits, acts = _forward(spec, params, batch.features)
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(n), batch.labels] -= 1.0
    delta = probs / n

    layers = _unpack(spec, params)
    grad = np.empty_like(params)
    goff = spec.param_count
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        a_in = acts[li]
        gw = a_in.T @ delta
        gb = delta.sum(axis=0)
        goff -= gb.size
        grad[goff : goff + gb.size] = gb
        goff -= gw.size
        grad[goff : goff + gw.size] = gw.ravel()
        if li > 0:
            delta = delta @ w.T
            if spec.activation == "tanh":
                delta = delta * (1.0 - acts[li] ** 2)
            else:
                delta = delta * (acts[li] > 0.0)
    check_finite(grad, "backward_grad result")
    return grad


def local_train(
    spec: MlpSpec,
    w_t: ParamVector,
    shard: Batch,
    local_lr: float,
    batch_size: int,
    local_epochs: int,
    stream: RngStream,
) -> ParamVector:
    """Mini-batch SGD from w_t on the shard; returns the update w_final - w_t.

    Shuffle order is drawn from the caller-provided stream, so two clients
    with the same shard but different streams take different paths.
    """
    if len(shard) == 0:
        raise ValueError("empty shard")
    if local_lr <= 0:
        raise ValueError("local_lr must be > 0")
    w = w_t.copy()
    n = len(shard)
    for _ in range(local_epochs):
        order = stream.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            mb = Batch(shard.features[idx], shard.labels[idx])
            w -= local_lr * backward_grad(spec, w, mb)
    update = w - w_t
    check_finite(update, "local_train update")
    return update


def evaluate(spec: MlpSpec, params: ParamVector, test: Batch) -> float:
    """Fraction of argmax-correct examples; argmax ties go to the lowest class."""
    if len(test) == 0:
        raise ValueError("empty test set")
    with np.errstate(over="ignore", invalid="ignore"):
        logits, _ = _forward(spec, params, test.features)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == test.labels))

"""Dense ReLU classifier with exact reverse-mode gradients.

Parameters live in a single flat float64 vector ("ParamVector"): for each
layer, the weight matrix row-major with shape (fan_out, fan_in), then the
bias of length fan_out. Perturbations share the same layout, so model and
perturbation arithmetic is plain vector arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Rng


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths [d_in, h1, ..., d_out]; hidden ReLU, raw logits out."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs >= 2 entries, all >= 1")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat vector; raises on bad length."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params(),):
            raise ValueError("layout mismatch")
        out = []
        pos = 0
        sizes = self.layer_sizes
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            w = theta[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = theta[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out


def init_params(spec: MlpSpec, rng: Rng) -> np.ndarray:
    """Uniform[-s, s] weights with s = sqrt(6 / (fan_in + fan_out)), zero biases."""
    gen = rng.generator()
    theta = np.zeros(spec.num_params())
    pos = 0
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        n_w = fan_in * fan_out
        theta[pos : pos + n_w] = gen.uniform(-s, s, size=n_w)
        pos += n_w + fan_out  # biases stay zero
    return theta


def _forward_cached(spec: MlpSpec, theta: np.ndarray, inputs: np.ndarray):
    """Forward pass keeping post-activation outputs for the backward pass."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise ValueError("layout mismatch")
    layers = spec.unpack(theta)
    acts = [x]
    z = x
    for k, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        if k < len(layers) - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def forward(spec: MlpSpec, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Logits, shape (m, d_out)."""
    return _forward_cached(spec, theta, inputs)[-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def xent_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """(mean loss, per-example losses) for cross entropy on raw logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("layout mismatch")
    logp = _log_softmax(logits)
    per_example = -logp[np.arange(len(labels)), labels]
    return float(np.mean(per_example)), per_example


def grad(spec: MlpSpec, theta: np.ndarray, inputs, labels) -> np.ndarray:
    """Exact mean-xent gradient w.r.t. the flat parameter vector."""
    labels = np.asarray(labels, dtype=np.int64)
    acts = _forward_cached(spec, theta, inputs)
    logits = acts[-1]
    m = logits.shape[0]
    if labels.shape != (m,):
        raise ValueError("layout mismatch")

    delta = softmax(logits)
    delta[np.arange(m), labels] -= 1.0
    delta /= m

    layers = spec.unpack(theta)
    out = np.zeros_like(np.asarray(theta, dtype=np.float64))
    pos = len(out)
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        a_prev = acts[k]
        fan_out, fan_in = w.shape
        pos -= fan_out
        out[pos : pos + fan_out] = delta.sum(axis=0)
        pos -= fan_in * fan_out
        out[pos : pos + fan_in * fan_out] = (delta.T @ a_prev).ravel()
        if k > 0:
            delta = delta @ w
            delta[acts[k] <= 0.0] = 0.0  # ReLU subgradient 0 at the kink
    return out


def input_grad(spec: MlpSpec, theta: np.ndarray, inputs, labels) -> np.ndarray:
    """Gradient of the mean xent loss w.r.t. the inputs, shape (m, d_in)."""
    labels = np.asarray(labels, dtype=np.int64)
    acts = _forward_cached(spec, theta, inputs)
    logits = acts[-1]
    m = logits.shape[0]
    delta = softmax(logits)
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    layers = spec.unpack(theta)
    for k in range(len(layers) - 1, 0, -1):
        w, _ = layers[k]
        delta = delta @ w
        delta[acts[k] <= 0.0] = 0.0
    return delta @ layers[0][0]


def predict(spec: MlpSpec, theta: np.ndarray, inputs) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(forward(spec, theta, inputs), axis=1)


@dataclass(frozen=True)
class PiecewiseToyLoss:
    """Scalar one-example loss g(theta * x) with g(z) = z for z >= 0, -2z below."""

    x: float = 1.0


def toy_loss_and_grad(toy: PiecewiseToyLoss, theta: float) -> tuple[float, float]:
    """(loss, subgradient); the kink at z = 0 takes the right derivative +1."""
    z = theta * toy.x
    if z >= 0.0:
        return z, toy.x
    return -2.0 * z, -2.0 * toy.x

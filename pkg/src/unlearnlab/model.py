"""Multilayer-perceptron classifier over a flat parameter vector.

All training and unlearning updates are plain arithmetic on the flat vector;
the layout is fixed (per layer: weight matrix row-major, then bias) so
gradients, Fisher diagonals, and masks all align coordinate-by-coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ComputationRecord,
    Tensor,
    affine,
    backward,
    relu,
    softmax_cross_entropy,
)


@dataclass(frozen=True)
class ModelConfig:
    """Fully-connected relu net: sizes are (input, hidden..., classes)."""

    layer_sizes: tuple[int, ...]
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "init_scale": self.init_scale,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            layer_sizes=tuple(d["layer_sizes"]),
            init_scale=float(d["init_scale"]),
            seed=int(d["seed"]),
        )


def layer_shapes(cfg: ModelConfig) -> list[tuple[tuple[int, int], int]]:
    sizes = cfg.layer_sizes
    return [((sizes[i], sizes[i + 1]), sizes[i + 1]) for i in range(len(sizes) - 1)]


def param_count(cfg: ModelConfig) -> int:
    return sum(i * o + o for (i, o), _ in layer_shapes(cfg))


def init_params(cfg: ModelConfig) -> np.ndarray:
    """Seeded init: W ~ Uniform(-s, s) with s = init_scale / sqrt(fan_in), b = 0."""
    rng = np.random.default_rng(cfg.seed)
    pieces = []
    for (fan_in, fan_out), _ in layer_shapes(cfg):
        s = cfg.init_scale / np.sqrt(fan_in)
        pieces.append(rng.uniform(-s, s, size=fan_in * fan_out))
        pieces.append(np.zeros(fan_out))
    return np.concatenate(pieces).astype(np.float64)


def unflatten(theta: np.ndarray, cfg: ModelConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into per-layer (W, b) views."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (param_count(cfg),):
        raise ValueError(
            f"parameter vector has length {theta.size}, expected {param_count(cfg)}"
        )
    layers = []
    pos = 0
    for (fan_in, fan_out), bias in layer_shapes(cfg):
        w = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos : pos + bias]
        pos += bias
        layers.append((w, b))
    return layers


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    pieces = []
    for w, b in layers:
        pieces.append(np.asarray(w, dtype=np.float64).ravel())
        pieces.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(pieces)


def forward_logits(theta: np.ndarray, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Affine/relu chain with a linear final layer; pure numpy, no recording."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_size:
        raise ValueError(
            f"input has shape {x.shape}, expected (batch, {cfg.input_size})"
        )
    layers = unflatten(theta, cfg)
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return h @ w + b


def weighted_loss(
    theta: np.ndarray,
    cfg: ModelConfig,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
) -> ComputationRecord:
    """Record mean_i w_i * CE(theta; x_i, y_i) with params as graph leaves.

    Weights are constants (no gradient flows through them).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_size:
        raise ValueError(
            f"input has shape {x.shape}, expected (batch, {cfg.input_size})"
        )
    param_tensors: list[Tensor] = []
    for w, b in unflatten(theta, cfg):
        param_tensors.append(Tensor(w.copy()))
        param_tensors.append(Tensor(b.copy()))
    h = Tensor(x)
    n_layers = len(cfg.layer_sizes) - 1
    for li in range(n_layers):
        h = affine(h, param_tensors[2 * li], param_tensors[2 * li + 1])
        if li < n_layers - 1:
            h = relu(h)
    root = softmax_cross_entropy(h, np.asarray(y), weights)
    return ComputationRecord(root, param_tensors)


def loss_and_grad(
    theta: np.ndarray,
    cfg: ModelConfig,
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    record = weighted_loss(theta, cfg, x, y, weights)
    return record.value, backward(record)


def per_sample_losses(
    theta: np.ndarray, cfg: ModelConfig, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Per-sample cross-entropy, tape-free (used for adaptive weighting)."""
    logits = forward_logits(theta, cfg, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    y = np.asarray(y)
    p_true = probs[np.arange(len(y)), y]
    return -np.log(np.maximum(p_true, 1e-12))


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Row argmax with ties broken toward the lowest class index."""
    return np.argmax(logits, axis=1).astype(np.int64)


def predict_labels(theta: np.ndarray, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    return argmax_labels(forward_logits(theta, cfg, x))

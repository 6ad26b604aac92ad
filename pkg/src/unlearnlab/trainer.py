"""Minibatch SGD training, the retrain reference, and checkpoint storage.

Checkpoints are directories: ``manifest.json`` (schema, model config,
provenance) next to ``params.bin`` holding the raw little-endian float64
parameter vector, so round-trips are bit-identical.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, ForgetSplit
from .model import ModelConfig, init_params, loss_and_grad, param_count

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int
    batch_size: int
    schedule: str = "constant"  # constant | cosine
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "schedule": self.schedule,
            "momentum": self.momentum,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            lr=float(d["lr"]),
            epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]),
            schedule=str(d.get("schedule", "constant")),
            momentum=float(d.get("momentum", 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class Checkpoint:
    params: np.ndarray
    model_config: ModelConfig
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.model_config),):
            raise ValueError(
                f"parameter vector length {self.params.size} does not match "
                f"model config ({param_count(self.model_config)})"
            )


def _lr_factor(schedule: str, step: int, total_steps: int) -> float:
    if schedule == "cosine" and total_steps > 0:
        return 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
    return 1.0


def sgd_train(
    init: np.ndarray,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset: Dataset,
    indices: np.ndarray,
    grad_mask: np.ndarray | None = None,
    on_batch=None,
    role: str = "train",
    method: str | None = None,
) -> Checkpoint:
    """Momentum SGD over seeded per-epoch shuffles of ``indices``.

    ``grad_mask`` (0/1 per parameter) zeroes gradients before the momentum
    buffer, so masked coordinates never move. ``on_batch(indices)`` fires for
    every minibatch; instrumentation only. Aborts on a non-finite loss.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ValueError("training index set must be nonempty")
    theta = np.asarray(init, dtype=np.float64).copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = np.zeros_like(theta)
    batches_per_epoch = int(np.ceil(len(indices) / cfg.batch_size))
    total_steps = cfg.epochs * batches_per_epoch
    epoch_mean_loss: list[float] = []
    step = 0
    t0 = time.perf_counter()
    for _ in range(cfg.epochs):
        perm = rng.permutation(indices)
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            if on_batch is not None:
                on_batch(batch)
            loss, grad = loss_and_grad(
                theta, model_cfg, dataset.features[batch], dataset.labels[batch]
            )
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {step}")
            if grad_mask is not None:
                grad = grad * grad_mask
            velocity = cfg.momentum * velocity + grad
            theta -= cfg.lr * _lr_factor(cfg.schedule, step, total_steps) * velocity
            losses.append(loss)
            step += 1
        epoch_mean_loss.append(float(np.mean(losses)))
    wall = time.perf_counter() - t0
    provenance = {
        "role": role,
        "method": method,
        "seeds": {"train": cfg.seed, "model": model_cfg.seed},
        "wall_seconds": wall,
        "train_config": cfg.to_dict(),
        "steps": step,
        "epoch_mean_loss": epoch_mean_loss,
    }
    return Checkpoint(theta, model_cfg, provenance)


def retrain_oracle(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    dataset: Dataset,
    split: ForgetSplit,
    on_batch=None,
) -> Checkpoint:
    """Gold-standard reference: fresh init, trained on the remain set only.

    The forget indices are never handed to the training loop; the assertion
    makes the contract explicit and instrumentable via ``on_batch``.
    """
    split.validate()
    forbidden = set(int(i) for i in split.forget_idx)

    def guard(batch):
        hit = forbidden.intersection(int(i) for i in batch)
        assert not hit, f"retrain touched forget indices {sorted(hit)[:5]}"
        if on_batch is not None:
            on_batch(batch)

    theta0 = init_params(replace(model_cfg, seed=cfg.seed))
    ckpt = sgd_train(
        theta0, cfg, model_cfg, dataset, split.remain_idx, on_batch=guard,
        role="retrain",
    )
    return ckpt


def save_checkpoint(ckpt: Checkpoint, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    blob = ckpt.params.astype("<f8").tobytes()
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(blob)
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "provenance": ckpt.provenance,
        "param_count": int(ckpt.params.size),
        "dtype": "f64",
        "blob": "params.bin",
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(directory: str) -> Checkpoint:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported checkpoint schema_version {manifest.get('schema_version')}"
        )
    model_cfg = ModelConfig.from_dict(manifest["model_config"])
    with open(os.path.join(directory, manifest["blob"]), "rb") as fh:
        blob = fh.read()
    n = int(manifest["param_count"])
    if len(blob) != 8 * n:
        raise ValueError(
            f"blob holds {len(blob) // 8} values but manifest declares {n}"
        )
    if n != param_count(model_cfg):
        raise ValueError("param_count does not match the model config")
    params = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return Checkpoint(params, model_cfg, manifest.get("provenance", {}))

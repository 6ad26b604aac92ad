"""Datasets, forget/remain/test splits, and their file formats.

The file formats are intentionally plain: CSV for features/labels (header
``label,f0,f1,...``, values written with 17 significant digits so float64
round-trips exactly) and JSON for index splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray  # (N, dim) float64
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (N, dim) aligned with labels (N,)")
        if len(self.labels) < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), got "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ForgetSplit:
    """Disjoint partition of a dataset into forget/remain training sets plus
    a held-out test set. forget + remain + test covers every index."""

    forget_idx: np.ndarray
    remain_idx: np.ndarray
    test_idx: np.ndarray
    mode: dict = field(default_factory=dict)

    def __post_init__(self):
        self.forget_idx = np.asarray(self.forget_idx, dtype=np.int64)
        self.remain_idx = np.asarray(self.remain_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        self.validate()

    def validate(self):
        if len(self.forget_idx) == 0:
            raise ValueError("forget set must be nonempty")
        if len(self.remain_idx) == 0:
            raise ValueError("remain set must be nonempty")
        sets = [set(self.forget_idx), set(self.remain_idx), set(self.test_idx)]
        total = len(self.forget_idx) + len(self.remain_idx) + len(self.test_idx)
        if len(sets[0] | sets[1] | sets[2]) != total:
            raise ValueError("split index sets overlap")

    @property
    def train_idx(self) -> np.ndarray:
        return np.concatenate([self.forget_idx, self.remain_idx])

    @property
    def p_forget(self) -> float:
        return len(self.forget_idx) / (len(self.forget_idx) + len(self.remain_idx))

    @property
    def p_remain(self) -> float:
        return 1.0 - self.p_forget


def generate_blobs(
    seed: int, n_per_class: int, class_count: int, dim: int, spread: float
) -> Dataset:
    """Gaussian clusters whose seeded means sit on a radius-2 sphere."""
    if n_per_class < 1 or class_count < 1 or dim < 1:
        raise ValueError("counts and dimension must be >= 1")
    if spread <= 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((class_count, dim))
    means = 2.0 * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    feats = []
    labels = []
    for c in range(class_count):
        feats.append(means[c] + spread * rng.standard_normal((n_per_class, dim)))
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(np.vstack(feats), np.concatenate(labels), class_count)


def make_random_subset_split(
    dataset: Dataset, fraction: float, test_fraction: float, seed: int
) -> ForgetSplit:
    """Held-out test indices first, then the training pool splits into
    |forget| = round(fraction * pool)."""
    if not 0 < fraction < 1:
        raise ValueError(f"forget fraction must be in (0,1), got {fraction}")
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test fraction must be in [0,1), got {test_fraction}")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test_idx = perm[:n_test]
    pool = perm[n_test:]
    n_forget = int(round(fraction * len(pool)))
    if n_forget == 0 or n_forget == len(pool):
        raise ValueError(
            f"fraction {fraction} leaves an empty forget or remain set "
            f"(pool size {len(pool)})"
        )
    return ForgetSplit(
        forget_idx=np.sort(pool[:n_forget]),
        remain_idx=np.sort(pool[n_forget:]),
        test_idx=np.sort(test_idx),
        mode={"kind": "random_subset", "fraction": fraction},
    )


def make_classwise_split(
    dataset: Dataset, class_id: int, test_fraction: float, seed: int
) -> ForgetSplit:
    """Forget every sample of one class; the test set is drawn from the other
    classes only, so it never contains the forgotten class."""
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test fraction must be in [0,1), got {test_fraction}")
    class_members = np.flatnonzero(dataset.labels == class_id)
    if len(class_members) == 0:
        raise ValueError(f"class {class_id} not present in dataset")
    others = np.flatnonzero(dataset.labels != class_id)
    if len(others) == 0:
        raise ValueError("dataset contains only the forgotten class")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(others)
    n_test = int(round(test_fraction * len(dataset)))
    if n_test >= len(others):
        raise ValueError(
            f"test fraction {test_fraction} exceeds the non-forgotten pool"
        )
    return ForgetSplit(
        forget_idx=np.sort(class_members),
        remain_idx=np.sort(perm[n_test:]),
        test_idx=np.sort(perm[:n_test]),
        mode={"kind": "classwise", "class_id": int(class_id)},
    )


def save_csv_dataset(dataset: Dataset, path: str) -> None:
    dim = dataset.features.shape[1]
    header = "label," + ",".join(f"f{i}" for i in range(dim))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv_dataset(path: str, class_count: int | None = None) -> Dataset:
    """Load ``label,f0,f1,...`` CSV; malformed rows report their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("label,"):
        raise ValueError(f"{path}: missing 'label,f0,...' header row")
    n_cols = len(lines[0].split(","))
    labels = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != n_cols:
            raise ValueError(
                f"{path}: line {lineno}: expected {n_cols} columns, got {len(cells)}"
            )
        try:
            labels.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels_arr.max()) + 1
    return Dataset(np.asarray(rows, dtype=np.float64), labels_arr, class_count)


def save_split(split: ForgetSplit, path: str) -> None:
    payload = {
        "forget_idx": [int(i) for i in split.forget_idx],
        "remain_idx": [int(i) for i in split.remain_idx],
        "test_idx": [int(i) for i in split.test_idx],
        "mode": split.mode,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_split(path: str) -> ForgetSplit:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return ForgetSplit(
        forget_idx=np.asarray(payload["forget_idx"], dtype=np.int64),
        remain_idx=np.asarray(payload["remain_idx"], dtype=np.int64),
        test_idx=np.asarray(payload["test_idx"], dtype=np.int64),
        mode=dict(payload.get("mode", {})),
    )

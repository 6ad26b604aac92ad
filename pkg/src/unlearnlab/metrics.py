"""Evaluation metrics against a retrain reference.

Reported per checkpoint: accuracy on the forget (FA), remain (RA) and test
(TA) sets, an entropy-feature membership-inference success rate (MIA), the
empirical output KL divergence to the reference, the average metric disparity
in percentage points, and run-time seconds. Natural logs throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ForgetSplit
from .model import ModelConfig, forward_logits, predict_labels
from .trainer import Checkpoint

PROB_CLAMP = 1e-12

# The attack classifier is pinned for determinism: single standardized
# entropy feature, zero init, 500 full-batch gradient steps at lr 0.1.
MIA_GD_STEPS = 500
MIA_GD_LR = 0.1


@dataclass
class MetricsReport:
    fa: float
    ra: float
    ta: float
    mia: float
    kl_to_ref: float
    avg_d: float
    rte_seconds: float
    gaps: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fa": self.fa,
            "ra": self.ra,
            "ta": self.ta,
            "mia": self.mia,
            "kl_to_ref": self.kl_to_ref,
            "avg_d": self.avg_d,
            "rte_seconds": self.rte_seconds,
            "gaps": self.gaps,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        return MetricsReport(
            fa=float(d["fa"]),
            ra=float(d["ra"]),
            ta=float(d["ta"]),
            mia=float(d["mia"]),
            kl_to_ref=float(d["kl_to_ref"]),
            avg_d=float(d["avg_d"]),
            rte_seconds=float(d["rte_seconds"]),
            gaps=dict(d.get("gaps", {})),
            provenance=dict(d.get("provenance", {})),
        )

    def markdown_row(self) -> str:
        """Seven cells: FA/RA/TA/MIA with gaps in parentheses, Avg.D, KL, RTE."""
        cells = [
            f"{100 * self.fa:.2f} ({self.gaps.get('fa', 0.0):.2f})",
            f"{100 * self.ra:.2f} ({self.gaps.get('ra', 0.0):.2f})",
            f"{100 * self.ta:.2f} ({self.gaps.get('ta', 0.0):.2f})",
            f"{100 * self.mia:.2f} ({self.gaps.get('mia', 0.0):.2f})",
            f"{self.avg_d:.2f}",
            f"{self.kl_to_ref:.4f}",
            f"{self.rte_seconds:.2f}",
        ]
        return "| " + " | ".join(cells) + " |"


MARKDOWN_HEADER = (
    "| FA | RA | TA | MIA | Avg.D | D_KL | RTE(s) |\n"
    "|---|---|---|---|---|---|---|"
)


def accuracy(
    theta: np.ndarray, cfg: ModelConfig, dataset: Dataset, indices: np.ndarray
) -> float:
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ValueError("accuracy over an empty index set is undefined")
    preds = predict_labels(theta, cfg, dataset.features[indices])
    return float(np.mean(preds == dataset.labels[indices]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=1, keepdims=True)


def prediction_entropy(theta: np.ndarray, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Label-agnostic entropy H_i = -sum_c p_ic ln p_ic, clamped at 1e-12."""
    probs = _softmax(forward_logits(theta, cfg, x))
    return -np.sum(probs * np.log(np.maximum(probs, PROB_CLAMP)), axis=1)


def entropy_attack(
    member_entropy: np.ndarray,
    nonmember_entropy: np.ndarray,
    target_entropy: np.ndarray,
) -> tuple[float, bool]:
    """Fit the pinned logistic attacker and score the target set.

    Members (remain-set entropies) are labeled 1, non-members (test-set
    entropies) 0; the returned rate is the fraction of targets scored >= 0.5.
    A zero-variance feature falls back to the majority label; the second
    return value flags that case.
    """
    h_train = np.concatenate([member_entropy, nonmember_entropy]).astype(np.float64)
    y = np.concatenate(
        [np.ones(len(member_entropy)), np.zeros(len(nonmember_entropy))]
    )
    mu = h_train.mean()
    sigma = h_train.std()
    if sigma == 0.0:
        majority = 1.0 if len(member_entropy) >= len(nonmember_entropy) else 0.0
        return majority, True
    z = (h_train - mu) / sigma
    w = 0.0
    b = 0.0
    for _ in range(MIA_GD_STEPS):
        p = 1.0 / (1.0 + np.exp(-(w * z + b)))
        err = p - y
        w -= MIA_GD_LR * float(np.mean(err * z))
        b -= MIA_GD_LR * float(np.mean(err))
    z_target = (np.asarray(target_entropy, dtype=np.float64) - mu) / sigma
    scores = w * z_target + b
    return float(np.mean(scores >= 0.0)), False


def mia_success_rate(
    theta: np.ndarray, cfg: ModelConfig, split: ForgetSplit, dataset: Dataset
) -> float:
    """Membership-inference true-positive rate on the forget set."""
    for name, idx in (("remain", split.remain_idx), ("test", split.test_idx),
                      ("forget", split.forget_idx)):
        if len(idx) == 0:
            raise ValueError(f"{name} set must be nonempty for the attack")
    h_remain = prediction_entropy(theta, cfg, dataset.features[split.remain_idx])
    h_test = prediction_entropy(theta, cfg, dataset.features[split.test_idx])
    h_forget = prediction_entropy(theta, cfg, dataset.features[split.forget_idx])
    rate, _ = entropy_attack(h_remain, h_test, h_forget)
    return rate


def empirical_kl(
    ckpt_u: Checkpoint, ckpt_ref: Checkpoint, dataset: Dataset, split: ForgetSplit
) -> float:
    """Mean over remain + forget samples of sum_c p_ref ln(p_ref / p_u)."""
    if ckpt_u.model_config != ckpt_ref.model_config:
        raise ValueError("checkpoints use different model configs")
    idx = np.concatenate([split.remain_idx, split.forget_idx])
    x = dataset.features[idx]
    p_ref = _softmax(forward_logits(ckpt_ref.params, ckpt_ref.model_config, x))
    p_u = _softmax(forward_logits(ckpt_u.params, ckpt_u.model_config, x))
    log_ratio = np.log(np.maximum(p_ref, PROB_CLAMP)) - np.log(
        np.maximum(p_u, PROB_CLAMP)
    )
    return float(np.mean(np.sum(p_ref * log_ratio, axis=1)))


def avg_disparity(report_u: MetricsReport, report_ref: MetricsReport) -> float:
    """Mean absolute gap over FA/RA/TA/MIA, in percentage points."""
    gaps = [
        abs(report_u.fa - report_ref.fa),
        abs(report_u.ra - report_ref.ra),
        abs(report_u.ta - report_ref.ta),
        abs(report_u.mia - report_ref.mia),
    ]
    return 100.0 * float(np.mean(gaps))


def _basic_metrics(
    ckpt: Checkpoint, dataset: Dataset, split: ForgetSplit
) -> tuple[float, float, float, float, bool]:
    theta, cfg = ckpt.params, ckpt.model_config
    fa = accuracy(theta, cfg, dataset, split.forget_idx)
    ra = accuracy(theta, cfg, dataset, split.remain_idx)
    ta = accuracy(theta, cfg, dataset, split.test_idx)
    h_remain = prediction_entropy(theta, cfg, dataset.features[split.remain_idx])
    h_test = prediction_entropy(theta, cfg, dataset.features[split.test_idx])
    h_forget = prediction_entropy(theta, cfg, dataset.features[split.forget_idx])
    mia, fallback = entropy_attack(h_remain, h_test, h_forget)
    return fa, ra, ta, mia, fallback


def full_report(
    ckpt_u: Checkpoint,
    ckpt_ref: Checkpoint,
    dataset: Dataset,
    split: ForgetSplit,
    rte_seconds: float = 0.0,
) -> MetricsReport:
    """Compose all metrics for one unlearned checkpoint vs. its reference."""
    fa, ra, ta, mia, fb_u = _basic_metrics(ckpt_u, dataset, split)
    fa_r, ra_r, ta_r, mia_r, fb_r = _basic_metrics(ckpt_ref, dataset, split)
    gaps = {
        "fa": 100.0 * abs(fa - fa_r),
        "ra": 100.0 * abs(ra - ra_r),
        "ta": 100.0 * abs(ta - ta_r),
        "mia": 100.0 * abs(mia - mia_r),
    }
    provenance = {
        "method": ckpt_u.provenance.get("method"),
        "seeds": ckpt_u.provenance.get("seeds", {}),
        "reference": {
            "fa": fa_r, "ra": ra_r, "ta": ta_r, "mia": mia_r,
            "role": ckpt_ref.provenance.get("role"),
        },
        "mia_fallback": {"model": fb_u, "reference": fb_r},
    }
    return MetricsReport(
        fa=fa,
        ra=ra,
        ta=ta,
        mia=mia,
        kl_to_ref=empirical_kl(ckpt_u, ckpt_ref, dataset, split),
        avg_d=float(np.mean(list(gaps.values()))),
        rte_seconds=rte_seconds,
        gaps=gaps,
        provenance=provenance,
    )

"""Held-out classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class MetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined for a single-class test set")
    ranks = pd.Series(s).rank(method="average").to_numpy()
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pairs(scores, labels) -> float:
    """O(P*N) pair count; reference for :func:`auc`."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    P, N = s[pos], s[~pos]
    if P.size == 0 or N.size == 0:
        raise MetricError("AUC is undefined for a single-class test set")
    diff = P[:, None] - N[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (P.size * N.size))


def precision(scores, labels, threshold: float = 0.0) -> float:
    pred = np.asarray(scores) > threshold
    if not pred.any():
        return 0.0
    return float((np.asarray(labels)[pred] > 0).mean())


def fscore(scores, labels, threshold: float = 0.0) -> float:
    pred = np.asarray(scores) > threshold
    pos = np.asarray(labels) > 0
    tp = int((pred & pos).sum())
    if tp == 0:
        return 0.0
    p = tp / pred.sum()
    r = tp / pos.sum()
    return float(2 * p * r / (p + r))


@dataclass
class Metrics:
    fscore: float = float("nan")
    auc: float = float("nan")
    precision: float = float("nan")
    loss_curve: list[float] = field(default_factory=list)
    mmd_curve: list[float] = field(default_factory=list)
    wall_ms: dict[str, float] = field(default_factory=dict)
    epochs_run: int = 0
    n_test: int = 0

    def __post_init__(self):
        for name in ("fscore", "auc", "precision"):
            v = getattr(self, name)
            if not (np.isnan(v) or 0.0 <= v <= 1.0):
                raise MetricError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"fscore": self.fscore, "auc": self.auc, "precision": self.precision,
                "loss_curve": list(self.loss_curve), "mmd_curve": list(self.mmd_curve),
                "wall_ms": dict(self.wall_ms), "epochs_run": self.epochs_run, "n_test": self.n_test}


def score_metrics(scores, labels, threshold: float = 0.0) -> Metrics:
    return Metrics(fscore(scores, labels, threshold), auc(scores, labels), precision(scores, labels, threshold),
                   n_test=int(np.asarray(labels).size))

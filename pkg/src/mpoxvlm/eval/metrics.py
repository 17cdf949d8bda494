"""Binary diagnostic metrics and their aggregation across seeds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

UNDEFINED = None  # marker for a metric whose denominator is zero


@dataclass(frozen=True)
class PredictionSet:
    ids: tuple
    labels: tuple
    preds: tuple
    scores: tuple

    def __post_init__(self):
        n = len(self.ids)
        if not (len(self.labels) == len(self.preds) == len(self.scores) == n):
            raise ValueError("ids, labels, preds and scores must have equal length")
        if len(set(self.ids)) != n:
            raise ValueError("prediction ids must be unique")
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError("scores must lie in [0, 1]")

    @classmethod
    def build(cls, labels, preds, scores, ids=None) -> "PredictionSet":
        ids = tuple(range(len(labels))) if ids is None else tuple(ids)
        return cls(
            ids,
            tuple(bool(x) for x in labels),
            tuple(bool(x) for x in preds),
            tuple(float(x) for x in scores),
        )

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(preds: PredictionSet) -> Confusion:
    if len(preds) == 0:
        raise ValueError("empty prediction set")
    y = np.asarray(preds.labels, dtype=bool)
    p = np.asarray(preds.preds, dtype=bool)
    return Confusion(
        tp=int(np.sum(y & p)),
        fp=int(np.sum(~y & p)),
        tn=int(np.sum(~y & ~p)),
        fn=int(np.sum(y & ~p)),
    )


def accuracy(c: Confusion) -> float:
    return (c.tp + c.tn) / c.n


def precision(c: Confusion):
    d = c.tp + c.fp
    return UNDEFINED if d == 0 else c.tp / d


def recall(c: Confusion):
    d = c.tp + c.fn
    return UNDEFINED if d == 0 else c.tp / d


def f1(c: Confusion):
    p, r = precision(c), recall(c)
    if p is UNDEFINED or r is UNDEFINED:
        return UNDEFINED
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def auroc(preds: PredictionSet) -> float:
    """Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie)."""
    y = np.asarray(preds.labels, dtype=bool)
    s = np.asarray(preds.scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks give ties half credit
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_pairwise(preds: PredictionSet) -> float:
    """O(n^2) reference over all (positive, negative) pairs."""
    pos = [s for s, l in zip(preds.scores, preds.labels) if l]
    neg = [s for s, l in zip(preds.scores, preds.labels) if not l]
    if not pos or not neg:
        raise ValueError("AUROC needs at least one positive and one negative")
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


METRICS = ("accuracy", "precision", "recall", "f1", "auroc")


def metric_values(preds: PredictionSet) -> dict:
    c = confusion(preds)
    return {
        "accuracy": accuracy(c),
        "precision": precision(c),
        "recall": recall(c),
        "f1": f1(c),
        "auroc": auroc(preds),
        "confusion": c.to_json(),
    }


def mean_std(values) -> dict:
    """Mean and sample standard deviation; undefined entries are skipped."""
    vals = [v for v in values if v is not UNDEFINED]
    if not vals:
        return {"mean": UNDEFINED, "std": UNDEFINED, "n": 0, "single_seed": False}
    mean = math.fsum(vals) / len(vals)
    std = 0.0 if len(vals) == 1 else float(np.std(vals, ddof=1))
    return {"mean": mean, "std": std, "n": len(vals), "single_seed": len(vals) == 1}


@dataclass
class MetricsReport:
    config: dict
    seeds: list
    per_seed: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        return {m: mean_std([self.per_seed[s][m] for s in self.seeds]) for m in METRICS}

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "seeds": list(self.seeds),
            "per_seed": {str(s): self.per_seed[s] for s in self.seeds},
            "summary": self.summary,
        }


def format_pm(stat: dict, scale: float = 100.0) -> str:
    if stat["mean"] is UNDEFINED:
        return "undefined"
    return f"{stat['mean'] * scale:.2f}±{stat['std'] * scale:.2f}"

"""Classifier and cache-efficiency metrics.

Active is the positive class throughout.  Ratios that would divide by zero
are reported as ``None`` except MCC, which is defined as 0 when any marginal
is empty so feature rankings stay total.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .perceptron import Outcome, TrainingEvent

QUADRANTS = (Outcome.TP, Outcome.FN, Outcome.FP, Outcome.TN)
_Q = {q: k for k, q in enumerate(QUADRANTS)}


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fn_: int = 0
    fp: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn_ + self.fp + self.tn

    def add(self, outcome: Outcome, n: int = 1) -> None:
        if outcome is Outcome.TP:
            self.tp += n
        elif outcome is Outcome.FN:
            self.fn_ += n
        elif outcome is Outcome.FP:
            self.fp += n
        else:
            self.tn += n

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn_, "fp": self.fp, "tn": self.tn}


def accuracy(cm: ConfusionMatrix) -> float | None:
    if cm.total == 0:
        return None
    return (cm.tp + cm.tn) / cm.total


def f1(cm: ConfusionMatrix) -> float | None:
    den = 2 * cm.tp + cm.fp + cm.fn_
    if den == 0:
        return None
    return 2 * cm.tp / den


def mcc(cm: ConfusionMatrix) -> float:
    tp, fn, fp, tn = cm.tp, cm.fn_, cm.fp, cm.tn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def mcc_decomposed(cm: ConfusionMatrix) -> float:
    """MCC written as (correct - incorrect) / sqrt(actual * predicted).

    The diagonals of the confusion matrix give the correct and incorrect
    products; the row and column bisections give the actual and predicted
    class products.
    """
    correct = cm.tp * cm.tn
    incorrect = cm.fp * cm.fn_
    actual = (cm.tp + cm.fn_) * (cm.tn + cm.fp)
    predicted = (cm.tp + cm.fp) * (cm.tn + cm.fn_)
    if actual == 0 or predicted == 0:
        return 0.0
    return (correct - incorrect) / (math.sqrt(actual) * math.sqrt(predicted))


# --------------------------------------------------------------------------
# per-feature bookkeeping

class InfluenceAccumulator:
    """Per-feature weight sums and confusion counts over training events.

    ``sums[q, f]`` is the total stored weight of feature ``f`` over events in
    system quadrant ``q`` (order TP, FN, FP, TN); ``counts[q]`` is the system
    confusion matrix.  ``feature_cm[f, q]`` counts the feature's own opinion
    (sign of its weight) against the ground truth, and ``abstain[f]`` counts
    events where its weight was zero.
    """

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.sums = np.zeros((4, n_features), dtype=np.int64)
        self.counts = np.zeros(4, dtype=np.int64)
        self.feature_cm = np.zeros((n_features, 4), dtype=np.int64)
        self.abstain = np.zeros(n_features, dtype=np.int64)

    def add(self, event: TrainingEvent) -> None:
        q = _Q[event.outcome]
        self.counts[q] += 1
        w = event.prediction.weights
        truth_active = event.outcome.actual_active
        for f, wf in enumerate(w):
            self.sums[q, f] += wf
            if wf == 0:
                self.abstain[f] += 1
            elif wf > 0:
                self.feature_cm[f, 0 if truth_active else 2] += 1
            else:
                self.feature_cm[f, 1 if truth_active else 3] += 1

    def extend(self, events: Iterable[TrainingEvent]) -> "InfluenceAccumulator":
        for e in events:
            self.add(e)
        return self

    @property
    def system(self) -> ConfusionMatrix:
        return ConfusionMatrix(*(int(x) for x in self.counts))

    def feature_confusion(self, f: int) -> ConfusionMatrix:
        return ConfusionMatrix(*(int(x) for x in self.feature_cm[f]))

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "sums": self.sums.tolist(),
            "feature_cm": self.feature_cm.tolist(),
            "abstain": self.abstain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InfluenceAccumulator":
        sums = np.asarray(d["sums"], dtype=np.int64).reshape(4, -1)
        acc = cls(sums.shape[1])
        acc.sums = sums
        acc.counts = np.asarray(d["counts"], dtype=np.int64)
        acc.feature_cm = np.asarray(d["feature_cm"], dtype=np.int64).reshape(-1, 4)
        acc.abstain = np.asarray(d["abstain"], dtype=np.int64)
        return acc


def per_feature_confusion(events: Iterable[TrainingEvent], n_features: int):
    """Confusion matrix of each feature's own opinion, plus abstention counts."""
    acc = InfluenceAccumulator(n_features).extend(events)
    return [acc.feature_confusion(f) for f in range(n_features)], acc.abstain.tolist()


def _mean(acc: InfluenceAccumulator, q: Outcome, f: int) -> float:
    k = _Q[q]
    n = acc.counts[k]
    return float(acc.sums[k, f]) / n if n else 0.0


def influence_correct(acc: InfluenceAccumulator, f: int) -> float:
    return _mean(acc, Outcome.TP, f) - _mean(acc, Outcome.TN, f)


def influence_incorrect(acc: InfluenceAccumulator, f: int) -> float:
    return _mean(acc, Outcome.FN, f) - _mean(acc, Outcome.FP, f)


def influence_total(acc: InfluenceAccumulator, f: int) -> float:
    return influence_correct(acc, f) + influence_incorrect(acc, f)


def bias_series(weights: np.ndarray, epoch_len: int) -> list[list[float | None]]:
    """Mean contributed weight of each feature over consecutive packet epochs.

    ``weights`` has one row per inference (packet order) and one column per
    feature.  Returns one list per epoch; an epoch without rows yields
    ``None`` entries.
    """
    if epoch_len <= 0:
        raise ValueError("epoch_len must be positive")
    w = np.asarray(weights)
    if w.ndim != 2:
        raise ValueError("weights must be 2-D (inferences x features)")
    n, nf = w.shape
    out = []
    for start in range(0, max(n, 1), epoch_len):
        chunk = w[start:start + epoch_len]
        if len(chunk) == 0:
            out.append([None] * nf)
        else:
            out.append([float(x) for x in chunk.mean(axis=0)])
    return out


# --------------------------------------------------------------------------
# cache entry lifecycle

@dataclass(frozen=True, slots=True)
class LifecycleRecord:
    flow_id: int
    t0: int
    t_last: int
    t_evict: int
    end_flush: bool = False

    @property
    def lifetime(self) -> int:
        return self.t_last - self.t0

    @property
    def deadtime(self) -> int:
        return self.t_evict - self.t_last

    @property
    def efficiency(self) -> float:
        span = self.t_evict - self.t0
        return 0.0 if span == 0 else (self.t_last - self.t0) / span


@dataclass
class LifecycleStats:
    count: int
    rejected: int
    lifetime: np.ndarray = field(repr=False)
    deadtime: np.ndarray = field(repr=False)
    efficiency: np.ndarray = field(repr=False)

    def quantiles(self, qs=(0.0, 0.25, 0.5, 0.75, 1.0)) -> dict:
        out = {}
        for name in ("lifetime", "deadtime", "efficiency"):
            arr = getattr(self, name)
            out[name] = [float(x) for x in np.quantile(arr, qs)] if len(arr) else [None] * len(qs)
        return out

    def efficiency_histogram(self, bins: int = 10):
        return np.histogram(self.efficiency, bins=bins, range=(0.0, 1.0))


def lifecycle_stats(records: Iterable[LifecycleRecord]) -> LifecycleStats:
    lt, dt, eff = [], [], []
    rejected = 0
    for r in records:
        if not r.t0 <= r.t_last <= r.t_evict:
            rejected += 1
            continue
        lt.append(r.lifetime)
        dt.append(r.deadtime)
        eff.append(r.efficiency)
    return LifecycleStats(len(lt), rejected, np.asarray(lt, dtype=np.int64),
                          np.asarray(dt, dtype=np.int64), np.asarray(eff, dtype=float))


@dataclass(frozen=True)
class AppConfig:
    t_fast: float
    t_slow: float

    def __post_init__(self):
        if not self.t_slow >= self.t_fast >= 0:
            raise ValueError("need t_slow >= t_fast >= 0")


def estimate_appt(cfg: AppConfig, miss_rate: float) -> float:
    """First-order packet processing time from the cache miss rate."""
    if not 0.0 <= miss_rate <= 1.0:
        raise ValueError(f"miss rate {miss_rate} outside [0, 1]")
    return cfg.t_fast + miss_rate * cfg.t_slow


def feature_report(acc: InfluenceAccumulator, features: Sequence[int],
                   bias: Sequence[float | None] | None = None) -> list[dict]:
    """One row per feature with MCC and influence figures."""
    rows = []
    for k, fid in enumerate(features):
        cm = acc.feature_confusion(k)
        rows.append({
            "feature_id": fid,
            "mcc": mcc(cm),
            "influence_correct": influence_correct(acc, k),
            "influence_incorrect": influence_incorrect(acc, k),
            "influence_total": influence_total(acc, k),
            "bias": None if bias is None else bias[k],
            "tp": cm.tp, "fn": cm.fn_, "fp": cm.fp, "tn": cm.tn,
            "abstain": int(acc.abstain[k]),
        })
    return rows

"""Hashed perceptron flow correlator.

Each enabled feature owns a table of signed saturating counters.  Inference
sums the counters selected by the feature vector; a sum of zero or more
predicts *active* (expected reuse), a negative sum predicts *dormant*.

Feedback arrives through two per-set FIFO history queues:

* a flow found in the active queue was correctly predicted active (TP);
* a flow found in the dormant queue was wrongly predicted dormant (FN);
* an entry aged off the full active queue was wrongly predicted active (FP);
* an entry aged off the full dormant queue was correctly predicted dormant (TN).

Correct outcomes train only when the stored confidence is at or below the
adaptive training threshold; incorrect outcomes always train.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import INDEX_BITS, NULL_FEATURE


class Decision(enum.IntEnum):
    DORMANT = 0
    ACTIVE = 1


class Outcome(enum.Enum):
    TP = "tp"
    FN = "fn"
    FP = "fp"
    TN = "tn"

    @property
    def correct(self) -> bool:
        return self in (Outcome.TP, Outcome.TN)

    @property
    def actual_active(self) -> bool:
        return self in (Outcome.TP, Outcome.FN)


@dataclass(frozen=True)
class PredictorConfig:
    features: tuple[int, ...] = (6, 27, 21, 18, 10)
    counter_bits: int = 5
    history_depth: int = 8
    initial_threshold: int = 8
    threshold_saturation: int = 64
    index_bits: int = INDEX_BITS

    def __post_init__(self):
        if self.counter_bits < 2:
            raise ValueError("counter_bits must be >= 2")
        if self.history_depth < 1:
            raise ValueError("history_depth must be >= 1")
        if self.initial_threshold < 0:
            raise ValueError("initial_threshold must be >= 0")
        if self.threshold_saturation < 1:
            raise ValueError("threshold_saturation must be >= 1")
        if not 1 <= self.index_bits <= INDEX_BITS:
            raise ValueError(f"index_bits must be in 1..{INDEX_BITS}")

    @property
    def weight_min(self) -> int:
        return -(1 << (self.counter_bits - 1))

    @property
    def weight_max(self) -> int:
        return (1 << (self.counter_bits - 1)) - 1


def saturating_add(weight: int, delta: int, lo: int = -16, hi: int = 15) -> int:
    return min(hi, max(lo, weight + delta))


class FeatureTables:
    """Weight store: one int8 array per enabled feature."""

    def __init__(self, cfg: PredictorConfig):
        if cfg.counter_bits > 8:
            raise ValueError("counter_bits above 8 is not supported")
        self.cfg = cfg
        self.lo = cfg.weight_min
        self.hi = cfg.weight_max
        self.mask = (1 << cfg.index_bits) - 1
        self.tables = [
            np.zeros(1 if fid == NULL_FEATURE else 1 << cfg.index_bits, dtype=np.int8)
            for fid in cfg.features
        ]

    def __len__(self) -> int:
        return len(self.tables)

    def index(self, vector: Sequence[int]) -> tuple[int, ...]:
        """Reduce assembled 16-bit indices to each table's size."""
        m = self.mask
        return tuple(0 if len(t) == 1 else v & m for t, v in zip(self.tables, vector))

    def lookup(self, vector: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(t[i]) for t, i in zip(self.tables, vector))

    def train(self, vector: Sequence[int], delta: int) -> None:
        lo, hi = self.lo, self.hi
        for t, i in zip(self.tables, vector):
            w = int(t[i]) + delta
            t[i] = hi if w > hi else lo if w < lo else w

    def histogram(self) -> np.ndarray:
        """Counts per weight value, shape (features, hi - lo + 1)."""
        span = self.hi - self.lo + 1
        out = np.zeros((len(self.tables), span), dtype=np.int64)
        for k, t in enumerate(self.tables):
            out[k] = np.bincount(t.astype(np.int64) - self.lo, minlength=span)
        return out

    def digest(self) -> bytes:
        return b"".join(t.tobytes() for t in self.tables)


def weight_histogram(tables: FeatureTables) -> np.ndarray:
    return tables.histogram()


@dataclass(frozen=True, slots=True)
class Prediction:
    total: int
    vector: tuple[int, ...]
    weights: tuple[int, ...]
    on_hit: bool = False
    packet_index: int = -1

    @property
    def decision(self) -> Decision:
        return Decision.ACTIVE if self.total >= 0 else Decision.DORMANT

    @property
    def active(self) -> bool:
        return self.total >= 0

    @property
    def confidence(self) -> int:
        return abs(self.total)


def infer(tables: FeatureTables, vector: Sequence[int], on_hit: bool = False,
          packet_index: int = -1) -> Prediction:
    vec = tables.index(vector)
    weights = tables.lookup(vec)
    return Prediction(sum(weights), vec, weights, on_hit, packet_index)


@dataclass
class ThresholdState:
    phi: int = 8
    saturation: int = 64
    counter: int = 0
    correct_updates: int = 0
    incorrect_updates: int = 0

    def adapt(self, correct: bool) -> None:
        """Nudge the training threshold toward a 1:1 correct/incorrect update ratio."""
        if correct:
            self.correct_updates += 1
            self.counter -= 1
            if self.counter <= -self.saturation:
                self.phi = max(0, self.phi - 1)
                self.counter = 0
        else:
            self.incorrect_updates += 1
            self.counter += 1
            if self.counter >= self.saturation:
                self.phi += 1
                self.counter = 0


def adapt_threshold(thr: ThresholdState, correct: bool) -> None:
    thr.adapt(correct)


@dataclass(frozen=True, slots=True)
class TrainingEvent:
    outcome: Outcome
    flow_id: int
    prediction: Prediction
    applied: bool
    set_id: int


class HistoryQueues:
    """Active and dormant prediction FIFOs for every cache set."""

    def __init__(self, n_sets: int, depth: int = 8):
        self.n_sets = n_sets
        self.depth = depth
        self.active = [OrderedDict() for _ in range(n_sets)]
        self.dormant = [OrderedDict() for _ in range(n_sets)]

    def queue(self, set_id: int, active: bool) -> OrderedDict:
        return self.active[set_id] if active else self.dormant[set_id]

    def outstanding(self, set_id: int) -> list[int]:
        return list(self.active[set_id]) + list(self.dormant[set_id])


class FlowCorrelator:
    """Tables, queues and threshold bundled with the reinforcement rule."""

    def __init__(self, cfg: PredictorConfig, n_sets: int):
        self.cfg = cfg
        self.tables = FeatureTables(cfg)
        self.queues = HistoryQueues(n_sets, cfg.history_depth)
        self.threshold = ThresholdState(cfg.initial_threshold, cfg.threshold_saturation)
        self.applied_updates = 0

    def infer(self, vector, on_hit=False, packet_index=-1) -> Prediction:
        return infer(self.tables, vector, on_hit, packet_index)

    def reinforce(self, set_id: int, flow_id: int, pred: Prediction) -> list[TrainingEvent]:
        return reinforce(self, set_id, flow_id, pred)


def _train(c: FlowCorrelator, events: list, outcome: Outcome, flow_id: int,
           stored: Prediction, set_id: int) -> None:
    if outcome.correct:
        applied = stored.confidence <= c.threshold.phi
    else:
        applied = True
    if applied:
        c.tables.train(stored.vector, 1 if outcome.actual_active else -1)
        c.threshold.adapt(outcome.correct)
        c.applied_updates += 1
    events.append(TrainingEvent(outcome, flow_id, stored, applied, set_id))


def reinforce(c: FlowCorrelator, set_id: int, flow_id: int,
              pred: Prediction) -> list[TrainingEvent]:
    """Resolve any outstanding prediction for ``flow_id`` and enqueue ``pred``."""
    if not 0 <= set_id < c.queues.n_sets:
        raise IndexError(f"set id {set_id} out of range")
    events: list[TrainingEvent] = []
    active_q = c.queues.active[set_id]
    dormant_q = c.queues.dormant[set_id]
    stored = active_q.pop(flow_id, None)
    if stored is not None:
        _train(c, events, Outcome.TP, flow_id, stored, set_id)
    else:
        stored = dormant_q.pop(flow_id, None)
        if stored is not None:
            _train(c, events, Outcome.FN, flow_id, stored, set_id)

    q = active_q if pred.active else dormant_q
    if len(q) >= c.queues.depth:
        old_flow, old = q.popitem(last=False)
        _train(c, events, Outcome.FP if pred.active else Outcome.TN, old_flow, old, set_id)
    q[flow_id] = pred
    return events

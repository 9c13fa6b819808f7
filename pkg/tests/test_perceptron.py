import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowcorr.perceptron import (Decision, FeatureTables, FlowCorrelator, Outcome, Prediction,
                                 PredictorConfig, ThresholdState, adapt_threshold, infer,
                                 reinforce, saturating_add, weight_histogram)

FIVE = PredictorConfig()


def _tables_with(weights, cfg=FIVE):
    t = FeatureTables(cfg)
    for k, w in enumerate(weights):
        t.tables[k][k + 1] = w
    return t, tuple(k + 1 for k in range(len(weights)))


def test_infer_sum_and_decision():
    t, vec = _tables_with([3, -1, 0, 2, -5])
    p = infer(t, vec)
    assert p.total == -1 and p.decision is Decision.DORMANT and p.confidence == 1
    assert p.weights == (3, -1, 0, 2, -5)


def test_infer_cold_tie_is_active():
    t = FeatureTables(FIVE)
    p = infer(t, (1, 2, 3, 4, 5))
    assert p.total == 0 and p.active


def test_infer_single_feature():
    t, vec = _tables_with([15], PredictorConfig(features=(6,)))
    p = infer(t, vec)
    assert p.active and p.confidence == 15


def test_saturating_add():
    assert saturating_add(15, 1) == 15
    assert saturating_add(-16, -1) == -16
    assert saturating_add(0, 1) == 1


def _pred(c, vec, total=None):
    p = c.infer(vec)
    if total is None:
        return p
    return Prediction(total, p.vector, p.weights)


def test_tp_increments_when_confidence_within_threshold():
    c = FlowCorrelator(PredictorConfig(initial_threshold=10), 1)
    vec = (10, 20, 30, 40, 50)
    reinforce(c, 0, 7, _pred(c, vec, total=3))
    ev = reinforce(c, 0, 7, _pred(c, (1, 1, 1, 1, 1)))
    assert [e.outcome for e in ev] == [Outcome.TP] and ev[0].applied
    assert c.tables.lookup(vec) == (1, 1, 1, 1, 1)
    assert c.threshold.correct_updates == 1


def test_tp_skipped_above_threshold():
    c = FlowCorrelator(PredictorConfig(initial_threshold=2), 1)
    vec = (10, 20, 30, 40, 50)
    reinforce(c, 0, 7, _pred(c, vec, total=3))
    ev = reinforce(c, 0, 7, _pred(c, vec))
    assert ev[0].outcome is Outcome.TP and not ev[0].applied
    assert c.tables.lookup(vec) == (0,) * 5
    assert c.threshold.correct_updates == 0


def test_fn_increments_regardless_of_threshold():
    c = FlowCorrelator(PredictorConfig(initial_threshold=0), 1)
    vec = (10, 20, 30, 40, 50)
    reinforce(c, 0, 7, _pred(c, vec, total=-12))
    ev = reinforce(c, 0, 7, _pred(c, vec))
    assert ev[0].outcome is Outcome.FN and ev[0].applied
    assert c.tables.lookup(vec) == (1,) * 5
    assert c.threshold.incorrect_updates == 1


def test_fp_on_active_overflow():
    c = FlowCorrelator(FIVE, 1)
    for f in range(8):
        assert reinforce(c, 0, f, _pred(c, (f,) * 5)) == []
    ev = reinforce(c, 0, 100, _pred(c, (99,) * 5))
    assert [(e.outcome, e.flow_id) for e in ev] == [(Outcome.FP, 0)]
    assert c.tables.lookup((0,) * 5) == (-1,) * 5
    assert list(c.queues.active[0]) == list(range(1, 8)) + [100]


def test_tn_on_dormant_overflow_gated():
    c = FlowCorrelator(PredictorConfig(initial_threshold=4), 1)
    reinforce(c, 0, 0, _pred(c, (0,) * 5, total=-9))  # above threshold: not trained
    reinforce(c, 0, 1, _pred(c, (1,) * 5, total=-2))
    for f in range(2, 8):
        reinforce(c, 0, f, _pred(c, (f,) * 5, total=-1))
    ev = reinforce(c, 0, 50, _pred(c, (50,) * 5, total=-1))
    assert ev[0].outcome is Outcome.TN and not ev[0].applied
    ev = reinforce(c, 0, 51, _pred(c, (51,) * 5, total=-1))
    assert ev[0].outcome is Outcome.TN and ev[0].applied
    assert c.tables.lookup((1,) * 5) == (-1,) * 5
    assert c.tables.lookup((0,) * 5) == (0,) * 5


def test_resolved_flow_requeued_in_new_queue():
    c = FlowCorrelator(FIVE, 1)
    reinforce(c, 0, 3, _pred(c, (1,) * 5, total=5))
    reinforce(c, 0, 3, _pred(c, (1,) * 5, total=-5))
    assert 3 not in c.queues.active[0] and 3 in c.queues.dormant[0]


def test_reinforce_bad_set():
    c = FlowCorrelator(FIVE, 2)
    with pytest.raises(IndexError):
        reinforce(c, 2, 0, _pred(c, (0,) * 5))


def test_tp_path_saturates_at_max():
    c = FlowCorrelator(PredictorConfig(features=(6,), initial_threshold=100), 1)
    vec = (42,)
    for _ in range(40):
        reinforce(c, 0, 1, Prediction(0, vec, (0,)))
    assert c.tables.lookup(vec) == (15,)


def test_threshold_automaton():
    t = ThresholdState()
    for _ in range(64):
        adapt_threshold(t, False)
    assert t.phi == 9 and t.counter == 0
    t = ThresholdState()
    for k in range(500):
        t.adapt(k % 2 == 0)
    assert t.phi == 8
    t = ThresholdState(phi=0)
    for _ in range(64):
        t.adapt(True)
    assert t.phi == 0


def test_weight_histogram():
    t = FeatureTables(FIVE)
    h = weight_histogram(t)
    assert h.shape == (5, 32)
    assert (h[:, 16] == 65536).all() and h.sum() == 5 * 65536
    t.train((7, 7, 7, 7, 7), +1)
    h = weight_histogram(t)
    assert (h[:, 17] == 1).all() and (h.sum(axis=1) == 65536).all()


def test_null_feature_single_entry():
    t = FeatureTables(PredictorConfig(features=(26, 6)))
    assert len(t.tables[0]) == 1
    assert t.index((0, 0x1234)) == (0, 0x1234)


def test_config_validation():
    with pytest.raises(ValueError):
        PredictorConfig(history_depth=0)
    with pytest.raises(ValueError):
        PredictorConfig(counter_bits=1)
    assert (FIVE.weight_min, FIVE.weight_max) == (-16, 15)


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(-20, 20), st.integers(0, 3)), max_size=300))
def test_queue_discipline_and_bounds(ops):
    c = FlowCorrelator(PredictorConfig(features=(6, 27), history_depth=4, initial_threshold=3), 2)
    for flow, total, idx in ops:
        s = flow % 2
        reinforce(c, s, flow, Prediction(total, (idx, idx + 1), (0, 0)))
        for q in range(2):
            a, d = c.queues.active[q], c.queues.dormant[q]
            assert len(a) <= 4 and len(d) <= 4
            assert not (a.keys() & d.keys())
    for arr in c.tables.tables:
        assert arr.min() >= -16 and arr.max() <= 15
    assert c.threshold.phi >= 0

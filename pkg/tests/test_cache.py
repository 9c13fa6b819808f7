import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import flowcorr.cache as cache_mod
from flowcorr.cache import (CacheConfig, build_next_use, lifecycle_export, set_index, simulate,
                            simulate_hp, simulate_lru, simulate_min)
from flowcorr.flow import canonical_key
from flowcorr.perceptron import FlowCorrelator, Prediction, PredictorConfig
from flowcorr.trace_io import PacketRecord

from conftest import flow_packet, toy_trace
from oracles import lru_hits, min_exhaustive


def fa(n, policy="lru", **kw):
    return CacheConfig(total_entries=n, associativity=0, policy=policy, **kw)


def test_config_geometry():
    c = CacheConfig(total_entries=4096, associativity=8)
    assert (c.ways, c.n_sets, c.fully_associative) == (8, 512, False)
    assert fa(3).n_sets == 1 and fa(3).ways == 3
    with pytest.raises(ValueError):
        CacheConfig(total_entries=96, associativity=8)
    with pytest.raises(ValueError):
        CacheConfig(policy="fifo")


def test_set_index():
    k = canonical_key(flow_packet(3))
    assert set_index(k, fa(64)) == 0
    cfg = CacheConfig(total_entries=4096, associativity=8)
    idx = {set_index(canonical_key(flow_packet(i)), cfg) for i in range(2000)}
    assert max(idx) < 512 and len(idx) > 400
    assert set_index(k, cfg) == set_index(k, cfg)


def test_lru_examples():
    assert simulate_lru(toy_trace("ABAB"), fa(2)).hits == 2
    assert simulate_lru(toy_trace("ABCA"), fa(2)).hits == 0
    r = simulate_lru([], fa(2))
    assert (r.hits, r.packets, r.compulsory, r.capacity, r.hit_rate) == (0, 0, 0, 0, 0.0)


def test_next_use_examples():
    assert build_next_use([0, 1, 0]).tolist() == [2, 3, 3]
    assert build_next_use([5]).tolist() == [1]
    assert build_next_use([0, 0, 0]).tolist() == [1, 2, 3]
    assert build_next_use(toy_trace("ABA")).tolist() == [2, 3, 3]


def test_min_examples():
    assert simulate_min(toy_trace("ABCABC"), fa(2, "min")).hits == 2
    assert min_exhaustive("ABCABC", 2) == 2
    assert simulate_min(toy_trace("ABAB"), fa(2, "min")).hits == 2
    assert simulate_min(toy_trace("ABA"), fa(1, "min")).hits == 0


@settings(max_examples=200)
@given(st.lists(st.integers(0, 5), max_size=14), st.integers(1, 3))
def test_min_matches_exhaustive(seq, cap):
    assert simulate_min(toy_trace(seq), fa(cap, "min")).hits == min_exhaustive(seq, cap)


@given(st.lists(st.integers(0, 12), max_size=80), st.integers(1, 8))
def test_lru_matches_oracle_and_accounting(seq, cap):
    for pol in ("lru", "min", "hp"):
        r = simulate(toy_trace(seq), fa(cap, pol))
        assert r.hits + r.compulsory + r.capacity == r.packets == len(seq)
        assert r.compulsory == len(set(seq))
    assert simulate_lru(toy_trace(seq), fa(cap)).hit_mask.tolist() == lru_hits(seq, cap)


@given(st.lists(st.integers(0, 12), max_size=80), st.sampled_from([2, 4, 8]))
def test_min_dominates_hp_without_bypass(seq, cap):
    t = toy_trace(seq)
    hp = simulate_hp(t, fa(cap, "hp", allow_bypass=False))
    assert simulate_min(t, fa(cap, "min")).hits >= hp.hits


def test_set_associative_min_ge_lru():
    rng = random.Random(3)
    t = toy_trace([rng.randrange(200) for _ in range(3000)])
    cfg = CacheConfig(total_entries=64, associativity=4)
    assert simulate_min(t, cfg.replace(policy="min")).hits >= simulate_lru(t, cfg).hits


def test_lifecycle_examples():
    t = [flow_packet(0, 100), flow_packet(0, 150), flow_packet(1, 200)]
    r = simulate_lru(t, fa(1))
    recs = lifecycle_export(r)
    assert [(x.t0, x.t_last, x.t_evict, x.end_flush) for x in recs] == [(100, 150, 200, False), (200, 200, 200, True)]


class _Forced(FlowCorrelator):
    """Correlator whose decisions follow a per-packet script (True=active)."""
    script: dict = {}

    def infer(self, vector, on_hit=False, packet_index=-1):
        p = super().infer(vector, on_hit, packet_index)
        active = self.script.get(packet_index, True)
        return Prediction(0 if active else -1, p.vector, p.weights, on_hit, packet_index)


@pytest.fixture
def forced(monkeypatch):
    monkeypatch.setattr(cache_mod, "FlowCorrelator", _Forced)
    return _Forced


def test_hp_marked_entry_evicted_before_lru(forced):
    forced.script = {2: False}
    r = simulate_hp(toy_trace("ABACB"), fa(2, "hp"))
    assert np.flatnonzero(r.hit_mask).tolist() == [2, 4]
    assert r.early_evictions == 1
    assert [x.flow_id for x in r.lifecycle if not x.end_flush] == [0]
    assert simulate_lru(toy_trace("ABACB"), fa(2)).hits == 1


def test_hp_mark_cleared_on_hit(forced):
    forced.script = {1: False}
    r = simulate_hp(toy_trace("AAA"), fa(2, "hp"), record_events=True)
    assert r.mark_corrections == 1 and r.hits == 2
    assert not next(iter(r.flow_table.entries())).marked_dormant
    assert any(e.outcome.name == "FN" for e in r.events)


def test_hp_bypass_on_dormant_miss(forced):
    forced.script = {1: False}
    r = simulate_hp(toy_trace("ABB"), fa(2, "hp"))
    assert r.bypasses == 1 and r.hit_mask.tolist() == [False, False, False]
    assert r.compulsory == 2 and r.capacity == 1
    r = simulate_hp(toy_trace("ABB"), fa(2, "hp", allow_bypass=False))
    assert r.bypasses == 0 and r.hits == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=120), st.sampled_from([1, 2, 4]))
def test_hp_cold_start_matches_lru(seq, cap):
    t = toy_trace(seq)
    hp = simulate_hp(t, fa(cap, "hp"))
    lru = simulate_lru(t, fa(cap))
    k = hp.first_update_index if hp.first_update_index is not None else len(t)
    assert hp.hit_mask[:k + 1].tolist() == lru.hit_mask[:k + 1].tolist()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=300), st.integers(0, 3))
def test_hp_invariants_checked(seq, seed):
    cfg = CacheConfig(total_entries=16, associativity=4, policy="hp", seed=seed,
                      predictor=PredictorConfig(features=(0, 6, 16, 27)))
    r = simulate_hp(toy_trace(seq), cfg, check=True)
    assert r.max_queue_len <= 8
    assert r.flow_table_violations == 0
    for x in r.lifecycle:
        assert x.t0 <= x.t_last <= x.t_evict


def test_hp_deterministic():
    rng = random.Random(8)
    t = toy_trace([rng.randrange(50) for _ in range(2000)])
    cfg = CacheConfig(total_entries=16, associativity=4, predictor=PredictorConfig(features=(0, 6, 27)), seed=5)
    a, b = simulate_hp(t, cfg), simulate_hp(t, cfg)
    assert a.weights_digest == b.weights_digest
    assert a.summary() == b.summary()
    assert (a.hit_mask == b.hit_mask).all()


def test_hp_learns_to_bypass_scans(short_shipped_trace):
    t = short_shipped_trace
    cfg = CacheConfig(total_entries=256, associativity=8, policy="hp",
                      predictor=PredictorConfig(features=(6,)))
    r = simulate_hp(t, cfg)
    keys = [canonical_key(p) for p in t]
    counts = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    ids = {k: e.flow_id for k, e in ((k, r.flow_table.get(k)) for k in counts)}
    inserted = {x.flow_id for x in r.lifecycle}
    warm = 20_000
    late_singles = {ids[k] for i, k in enumerate(keys) if i >= warm and counts[k] == 1}
    rate = len(late_singles - inserted) / len(late_singles)
    assert rate > 0.9, rate

"""Set-associative flow cache simulation under LRU, Belady MIN and the
hashed perceptron (HP) policy.

All three engines replay a packet trace in order.  A miss on a flow's first
packet is compulsory; any other miss is a capacity/conflict miss.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import FeatureContext, assemble_vector
from .flow import FlowKey, FlowTable, InvariantViolation, canonical_key
from .metrics import InfluenceAccumulator, LifecycleRecord
from .perceptron import FlowCorrelator, PredictorConfig
from .trace_io import PacketRecord

POLICIES = ("lru", "min", "hp")
FAMILIES = ("all", "reuse", "bypass")

_M64 = (1 << 64) - 1


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Flow cache geometry and policy.

    ``associativity=0`` (or equal to ``total_entries``) means one fully
    associative set; any entry count is then allowed.  Set-associative
    geometries need power-of-two sizes.
    """

    total_entries: int = 4096
    associativity: int = 8
    policy: str = "hp"
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    seed: int = 0
    allow_bypass: bool = True
    epoch_len: int = 10_000

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.total_entries < 1:
            raise ValueError("total_entries must be >= 1")
        if self.epoch_len < 1:
            raise ValueError("epoch_len must be >= 1")
        if self.associativity < 0:
            raise ValueError("associativity must be >= 0")
        if not self.fully_associative:
            if self.total_entries % self.associativity:
                raise ValueError("total_entries must be divisible by associativity")
            if not (_is_pow2(self.total_entries) and _is_pow2(self.associativity)):
                raise ValueError("set-associative sizes must be powers of two")

    @property
    def fully_associative(self) -> bool:
        return self.associativity in (0, self.total_entries)

    @property
    def ways(self) -> int:
        return self.total_entries if self.fully_associative else self.associativity

    @property
    def n_sets(self) -> int:
        return self.total_entries // self.ways

    def replace(self, **kw) -> "CacheConfig":
        from dataclasses import replace
        return replace(self, **kw)


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def set_index(key: FlowKey, cfg: CacheConfig) -> int:
    if cfg.n_sets == 1:
        return 0
    h = _mix64(cfg.seed & _M64)
    for part in key:
        h = _mix64(h ^ part)
    return h & (cfg.n_sets - 1)


@dataclass
class SimulationResult:
    policy: str
    config: CacheConfig
    packets: int = 0
    hits: int = 0
    compulsory: int = 0
    capacity: int = 0
    hit_mask: np.ndarray = field(default=None, repr=False)
    lifecycle: list = field(default_factory=list, repr=False)
    end_ts: int = 0
    # HP only
    bypasses: int = 0
    early_evictions: int = 0
    mark_corrections: int = 0
    first_update_index: int | None = None
    influence: dict = field(default_factory=dict, repr=False)
    threshold_trace: list = field(default_factory=list, repr=False)
    inference_weights: np.ndarray | None = field(default=None, repr=False)
    weight_hist: np.ndarray | None = field(default=None, repr=False)
    weights_digest: str | None = None
    max_queue_len: int = 0
    flow_table_violations: int = 0
    correlator: FlowCorrelator | None = field(default=None, repr=False)
    events: list | None = field(default=None, repr=False)
    flow_table: FlowTable | None = field(default=None, repr=False)

    @property
    def misses(self) -> int:
        return self.compulsory + self.capacity

    @property
    def hit_rate(self) -> float:
        return self.hits / self.packets if self.packets else 0.0

    def hit_rate_after(self, warmup: int) -> float:
        tail = self.hit_mask[warmup:]
        return float(tail.mean()) if len(tail) else 0.0

    def summary(self) -> dict:
        d = {
            "policy": self.policy,
            "packets": self.packets,
            "hits": self.hits,
            "compulsory": self.compulsory,
            "capacity": self.capacity,
            "hit_rate": self.hit_rate,
            "residencies": len(self.lifecycle),
        }
        if self.policy == "hp":
            d.update({
                "bypasses": self.bypasses,
                "early_evictions": self.early_evictions,
                "mark_corrections": self.mark_corrections,
                "first_update_index": self.first_update_index,
                "final_threshold": self.threshold_trace[-1]["phi"] if self.threshold_trace else None,
                "weights_digest": self.weights_digest,
                "features": list(self.config.predictor.features),
                "influence": {k: v.to_dict() for k, v in self.influence.items()},
            })
        return d


def _flow_ids(trace: Sequence[PacketRecord], cfg: CacheConfig):
    ids = np.empty(len(trace), dtype=np.int64)
    new = np.zeros(len(trace), dtype=bool)
    sets: list[int] = []
    index: dict[FlowKey, int] = {}
    for i, p in enumerate(trace):
        k = canonical_key(p)
        fid = index.get(k)
        if fid is None:
            fid = len(index)
            index[k] = fid
            sets.append(set_index(k, cfg))
            new[i] = True
        ids[i] = fid
    return ids, new, sets


def _finish(res: SimulationResult, trace, resident) -> None:
    """Flush residents at trace end as synthetic evictions."""
    end = trace[-1].ts_ns if len(trace) else 0
    res.end_ts = end
    for fid, (t0, tl) in resident:
        res.lifecycle.append(LifecycleRecord(fid, t0, tl, end, True))


def simulate_lru(trace: Sequence[PacketRecord], cfg: CacheConfig) -> SimulationResult:
    ids, new, set_of = _flow_ids(trace, cfg)
    ways = cfg.ways
    sets = [OrderedDict() for _ in range(cfg.n_sets)]
    res = SimulationResult("lru", cfg, packets=len(trace))
    mask = np.zeros(len(trace), dtype=bool)
    life = res.lifecycle
    for i, p in enumerate(trace):
        fid = int(ids[i])
        lines = sets[set_of[fid]]
        ts = p.ts_ns
        line = lines.get(fid)
        if line is not None:
            line[1] = ts
            lines.move_to_end(fid)
            mask[i] = True
            continue
        if new[i]:
            res.compulsory += 1
        else:
            res.capacity += 1
        if len(lines) >= ways:
            vid, (t0, tl) = lines.popitem(last=False)
            life.append(LifecycleRecord(vid, t0, tl, ts))
        lines[fid] = [ts, ts]
    res.hits = int(mask.sum())
    res.hit_mask = mask
    _finish(res, trace, ((f, tuple(v)) for s in sets for f, v in s.items()))
    return res


def build_next_use(trace_ids: Sequence[int]) -> np.ndarray:
    """Position of the next access to the same flow, ``len(trace)`` meaning never.

    Accepts flow ids directly or packet records.
    """
    n = len(trace_ids)
    if n and isinstance(trace_ids[0], PacketRecord):
        trace_ids = [canonical_key(p) for p in trace_ids]
    out = np.full(n, n, dtype=np.int64)
    last: dict = {}
    for i in range(n - 1, -1, -1):
        f = trace_ids[i]
        f = f if isinstance(f, tuple) else int(f)
        out[i] = last.get(f, n)
        last[f] = i
    return out


NEVER = math.inf


def simulate_min(trace: Sequence[PacketRecord], cfg: CacheConfig) -> SimulationResult:
    """Belady MIN replacement: evict the resident flow reused furthest in the future.

    Insertion is unconditional, so this bounds replacement-only policies.
    Ties between never-reused flows go to the lowest flow id.
    """
    ids, new, set_of = _flow_ids(trace, cfg)
    nxt = build_next_use(ids)
    ways = cfg.ways
    n_sets = cfg.n_sets
    resident = [dict() for _ in range(n_sets)]  # fid -> next use
    heaps = [[] for _ in range(n_sets)]
    stamps = [dict() for _ in range(n_sets)]  # fid -> [t0, tL]
    res = SimulationResult("min", cfg, packets=len(trace))
    mask = np.zeros(len(trace), dtype=bool)
    life = res.lifecycle
    for i, p in enumerate(trace):
        fid = int(ids[i])
        s = set_of[fid]
        live = resident[s]
        heap = heaps[s]
        nu = int(nxt[i])
        ts = p.ts_ns
        if fid in live:
            mask[i] = True
            live[fid] = nu
            stamps[s][fid][1] = ts
            heapq.heappush(heap, (-nu, fid))
            continue
        if new[i]:
            res.compulsory += 1
        else:
            res.capacity += 1
        if len(live) >= ways:
            while True:
                neg, vid = heapq.heappop(heap)
                if live.get(vid) == -neg:
                    break
            del live[vid]
            t0, tl = stamps[s].pop(vid)
            life.append(LifecycleRecord(vid, t0, tl, ts))
        live[fid] = nu
        stamps[s][fid] = [ts, ts]
        heapq.heappush(heap, (-nu, fid))
        if len(heap) > 4 * ways + 64:
            heap[:] = [(-v, f) for f, v in live.items()]
            heapq.heapify(heap)
    res.hits = int(mask.sum())
    res.hit_mask = mask
    _finish(res, trace, ((f, tuple(v)) for st in stamps for f, v in st.items()))
    return res


class _Line:
    __slots__ = ("entry", "t0", "tl")

    def __init__(self, entry, ts):
        self.entry = entry
        self.t0 = ts
        self.tl = ts


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def simulate_hp(trace: Sequence[PacketRecord], cfg: CacheConfig,
                record_events: bool = False, check: bool = False) -> SimulationResult:
    """Hashed perceptron managed cache.

    Per packet: observe the flow, assemble features (counters zero on a
    miss), infer, reinforce, then act.  A miss inserts only on an active
    prediction; a hit marks the entry for early eviction on a dormant
    prediction.  Victims are the oldest marked entry, else LRU.

    With ``record_events`` the result also carries the raw training events
    in ``result.events``.  ``check`` verifies queue, counter and weight
    invariants after every packet and raises :class:`InvariantViolation`.
    """
    pcfg = cfg.predictor
    features = pcfg.features
    nf = len(features)
    ways = cfg.ways
    table = FlowTable(strict=False)
    corr = FlowCorrelator(pcfg, cfg.n_sets)
    thr = corr.threshold
    rng = _rng(cfg.seed, 0) if 0 in features else None
    sets = [OrderedDict() for _ in range(cfg.n_sets)]
    marked = [0] * cfg.n_sets
    set_cache: dict[FlowKey, int] = {}
    accs = {fam: InfluenceAccumulator(nf) for fam in FAMILIES}
    acc_all, acc_reuse, acc_bypass = accs["all"], accs["reuse"], accs["bypass"]
    res = SimulationResult("hp", cfg, packets=len(trace))
    mask = np.zeros(len(trace), dtype=bool)
    wlog = np.zeros((len(trace), nf), dtype=np.int8)
    life = res.lifecycle
    events_log = [] if record_events else None
    epoch = cfg.epoch_len
    max_q = 0
    first_update = None
    allow_bypass = cfg.allow_bypass

    for i, p in enumerate(trace):
        key = canonical_key(p)
        s = set_cache.get(key)
        if s is None:
            s = set_cache[key] = set_index(key, cfg)
        entry, is_new = table.observe(key, p.ts_ns)
        fid = entry.flow_id
        hit = entry.cached
        ctx = FeatureContext.for_packet(p, fid, entry, rng)
        pred = corr.infer(assemble_vector(features, ctx), hit, i)
        wlog[i] = pred.weights
        events = corr.reinforce(s, fid, pred)
        for ev in events:
            acc_all.add(ev)
            (acc_reuse if ev.prediction.on_hit else acc_bypass).add(ev)
            if ev.applied and first_update is None:
                first_update = i
        if events_log is not None:
            events_log.extend(events)
        ql = max(len(corr.queues.active[s]), len(corr.queues.dormant[s]))
        if ql > max_q:
            max_q = ql

        lines = sets[s]
        ts = p.ts_ns
        if hit:
            mask[i] = True
            was_mru = next(reversed(lines)) == fid
            line = lines[fid]
            line.tl = ts
            lines.move_to_end(fid)
            table.on_cache_hit(entry, was_mru)
            if entry.marked_dormant:
                # prior dormant call was wrong; reinforce already ran the FN update
                entry.marked_dormant = False
                marked[s] -= 1
                res.mark_corrections += 1
            if not pred.active:
                entry.marked_dormant = True
                marked[s] += 1
        else:
            if is_new:
                res.compulsory += 1
            else:
                res.capacity += 1
            if pred.active or not allow_bypass:
                if len(lines) >= ways:
                    victim_id = None
                    if marked[s]:
                        for vid, ln in lines.items():
                            if ln.entry.marked_dormant:
                                victim_id = vid
                                break
                    if victim_id is None:
                        victim_id, vline = lines.popitem(last=False)
                    else:
                        vline = lines.pop(victim_id)
                        marked[s] -= 1
                        res.early_evictions += 1
                    table.on_cache_evict(vline.entry)
                    life.append(LifecycleRecord(victim_id, vline.t0, vline.tl, ts))
                table.on_cache_insert(entry)
                lines[fid] = _Line(entry, ts)
            else:
                res.bypasses += 1

        if check:
            _check_packet(corr, s, entry, lines, ways)

        if (i + 1) % epoch == 0 or i + 1 == len(trace):
            res.threshold_trace.append({
                "packet": i + 1, "phi": thr.phi,
                "correct_updates": thr.correct_updates,
                "incorrect_updates": thr.incorrect_updates,
            })

    res.hits = int(mask.sum())
    res.hit_mask = mask
    res.first_update_index = first_update
    res.influence = accs
    res.inference_weights = wlog
    res.weight_hist = corr.tables.histogram()
    res.weights_digest = hashlib.sha256(corr.tables.digest()).hexdigest()
    res.max_queue_len = max_q
    res.flow_table_violations = table.violations
    res.correlator = corr
    res.flow_table = table
    if events_log is not None:
        res.events = events_log
    _finish(res, trace, ((f, (ln.t0, ln.tl)) for st in sets for f, ln in st.items()))
    return res


def _check_packet(corr: FlowCorrelator, s: int, entry, lines, ways: int) -> None:
    q = corr.queues
    act, dor = q.active[s], q.dormant[s]
    if len(act) > q.depth or len(dor) > q.depth:
        raise InvariantViolation(f"set {s}: history queue over depth")
    if act.keys() & dor.keys():
        raise InvariantViolation(f"set {s}: flow in both history queues")
    if len(lines) > ways:
        raise InvariantViolation(f"set {s}: {len(lines)} lines in a {ways}-way set")
    if not entry.burst_count <= entry.ref_count <= entry.flow_packets:
        raise InvariantViolation(f"flow {entry.flow_id}: counter ordering broken")
    if not entry.cached and (entry.ref_count or entry.burst_count):
        raise InvariantViolation(f"flow {entry.flow_id}: counters set while uncached")
    t = corr.tables
    for w in t.tables:
        if w.min() < t.lo or w.max() > t.hi:
            raise InvariantViolation("weight outside counter range")


def simulate(trace: Sequence[PacketRecord], cfg: CacheConfig) -> SimulationResult:
    if cfg.policy == "lru":
        return simulate_lru(trace, cfg)
    if cfg.policy == "min":
        return simulate_min(trace, cfg)
    return simulate_hp(trace, cfg)


def lifecycle_export(result: SimulationResult) -> list[LifecycleRecord]:
    """Completed residencies; survivors at trace end carry ``end_flush=True``."""
    return list(result.lifecycle)

"""Feature ranking: MCC-based initial order, prefix sweeps, and iterative
differential gain re-ranking.

The gain of the n-th ranked feature is the hit-rate change produced by
adding it to the n-1 features ahead of it; the first feature is measured
against plain LRU.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .cache import CacheConfig, simulate_hp, simulate_lru
from .features import validate_feature_ids
from .metrics import mcc
from .trace_io import PacketRecord

log = logging.getLogger(__name__)


@dataclass
class SweepResult:
    ranking: tuple[int, ...]
    hit_rates: list[float]
    baseline_lru: float

    def rows(self) -> list[dict]:
        gains = adjacent_gain(self)
        return [
            {"prefix_len": n + 1, "feature_id": fid, "hit_rate": hr, "gain": g}
            for n, (fid, hr, g) in enumerate(zip(self.ranking, self.hit_rates, gains))
        ]


@dataclass
class IterationLog:
    initial: tuple[int, ...]
    initial_mcc: dict[int, float]
    passes: list[dict] = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "initial_ranking": list(self.initial),
            "initial_mcc": {str(k): v for k, v in self.initial_mcc.items()},
            "passes": self.passes,
            "converged": self.converged,
        }


def _hp_cfg(cfg: CacheConfig, features: Sequence[int]) -> CacheConfig:
    return cfg.replace(policy="hp", predictor=replace(cfg.predictor, features=tuple(features)))


def _hit_rate(trace, cfg, warmup):
    if cfg.policy == "lru":
        r = simulate_lru(trace, cfg)
    else:
        r = simulate_hp(trace, cfg)
    return r.hit_rate_after(warmup) if warmup else r.hit_rate


def initial_mcc_ranking(trace: Sequence[PacketRecord], candidates: Sequence[int],
                        cfg: CacheConfig) -> tuple[tuple[int, ...], dict[int, float]]:
    """Rank candidates by their own MCC in one simulation with all of them enabled."""
    candidates = validate_feature_ids(candidates)
    res = simulate_hp(trace, _hp_cfg(cfg, candidates))
    acc = res.influence["all"]
    scores = {fid: mcc(acc.feature_confusion(k)) for k, fid in enumerate(candidates)}
    return rank_by_score(scores), scores


def rank_by_score(scores: dict[int, float]) -> tuple[int, ...]:
    return tuple(sorted(scores, key=lambda f: (-scores[f], f)))


def sweep(trace: Sequence[PacketRecord], ranking: Sequence[int], cfg: CacheConfig,
          jobs: int = 1, warmup: int = 0) -> SweepResult:
    """Hit rate of each ranked prefix, plus the LRU baseline."""
    ranking = validate_feature_ids(ranking)
    if not ranking:
        raise ValueError("ranking must not be empty")
    cfgs = [cfg.replace(policy="lru")] + [_hp_cfg(cfg, ranking[:n]) for n in range(1, len(ranking) + 1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rates = list(pool.map(_hit_rate, [trace] * len(cfgs), cfgs, [warmup] * len(cfgs)))
    else:
        rates = [_hit_rate(trace, c, warmup) for c in cfgs]
    return SweepResult(ranking, rates[1:], rates[0])


def adjacent_gain(result: SweepResult) -> list[float]:
    p = result.hit_rates
    return [p[0] - result.baseline_lru] + [p[i] - p[i - 1] for i in range(1, len(p))]


def rerank(ranking: Sequence[int], gains: Sequence[float], epsilon: float = 0.0) -> tuple[int, ...]:
    """Sort by gain, descending; gains within ``epsilon`` of each other keep prior order."""
    order = list(range(len(ranking)))
    if epsilon > 0:
        # quantize so near-ties compare equal and the stable sort keeps them in place
        keys = [round(g / epsilon) for g in gains]
    else:
        keys = list(gains)
    order.sort(key=lambda k: -keys[k])
    return tuple(ranking[k] for k in order)


def ig_iterate(trace: Sequence[PacketRecord], candidates: Sequence[int], cfg: CacheConfig,
               max_iters: int = 3, jobs: int = 1, warmup: int = 0,
               epsilon: float = 0.0) -> tuple[tuple[int, ...], IterationLog]:
    """Re-rank by differential gain until the order is stable or ``max_iters`` passes ran."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    ranking, scores = initial_mcc_ranking(trace, candidates, cfg)
    log_ = IterationLog(ranking, scores)
    for it in range(1, max_iters + 1):
        sw = sweep(trace, ranking, cfg, jobs=jobs, warmup=warmup)
        gains = adjacent_gain(sw)
        new = rerank(ranking, gains, epsilon)
        log_.passes.append({
            "iteration": it,
            "input_ranking": list(ranking),
            "hit_rates": sw.hit_rates,
            "baseline_lru": sw.baseline_lru,
            "gains": gains,
            "output_ranking": list(new),
            "sweep": sw.rows(),
        })
        log.info("IG pass %d: %s -> %s", it, ranking, new)
        if new == ranking:
            log_.converged = True
            break
        ranking = new
    return ranking, log_


def top_k(ranking: Sequence[int], k: int) -> tuple[int, ...]:
    if not 0 <= k <= len(ranking):
        raise ValueError(f"k={k} outside 0..{len(ranking)}")
    return tuple(ranking[:k])

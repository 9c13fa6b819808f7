"""
Ranking features by what they add
=================================

A feature can score well alone yet add little once another feature
carries the same information.  Here the raw flags field (f4) scores
slightly higher by MCC than f6, which mixes the TCP flag bits with the
protocol and low port.  One pass of differential gain ranking moves f6 ahead.
"""

from flowcorr import CacheConfig, generate_synthetic, scan_and_bursty_spec
from flowcorr.ranking import ig_iterate

trace = generate_synthetic(scan_and_bursty_spec(duration_s=2.0))
cfg = CacheConfig(total_entries=256, associativity=8, policy="hp")

final, log = ig_iterate(trace, (4, 6, 11), cfg, max_iters=3)

print("MCC ranking:", log.initial)
for fid, score in sorted(log.initial_mcc.items()):
    print(f"  f{fid}: {score:.4f}")

for p in log.passes:
    print(f"pass {p['iteration']}: LRU {p['baseline_lru']:.4f}")
    for row in p["sweep"]:
        print(f"  +f{row['feature_id']:<3} hit rate {row['hit_rate']:.4f} gain {row['gain']:+.4f}")
    print("  ->", tuple(p["output_ranking"]))

print("final:", final, "converged" if log.converged else "(max passes reached)")

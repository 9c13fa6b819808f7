"""
Learning to bypass scan flows
=============================

Most flows in the built-in trace are single-packet scans.  LRU lets each
of them push a useful entry out.  The hashed perceptron learns from header
features which flows will come back, bypasses the rest, and marks hits it
expects to go dormant for early eviction.
"""

import numpy as np

from flowcorr import CacheConfig, PredictorConfig, generate_synthetic, scan_and_bursty_spec
from flowcorr.cache import simulate_hp, simulate_lru
from flowcorr.metrics import AppConfig, estimate_appt, feature_report, lifecycle_stats, mcc

trace = generate_synthetic(scan_and_bursty_spec())
cfg = CacheConfig(total_entries=256, associativity=8,
                  predictor=PredictorConfig(features=(6, 27, 21, 18, 10)))

lru = simulate_lru(trace, cfg.replace(policy="lru"))
hp = simulate_hp(trace, cfg.replace(policy="hp"))

warm = 20_000
print("LRU hit rate after warmup:", round(lru.hit_rate_after(warm), 4))
print("HP  hit rate after warmup:", round(hp.hit_rate_after(warm), 4))
print("bypassed misses:", hp.bypasses, "early evictions:", hp.early_evictions)

# system confusion over all training events, Active as the positive class
acc = hp.influence["all"]
print("confusion:", acc.system.as_dict(), "MCC", round(mcc(acc.system), 3))

# per-feature view: each feature's own vote is the sign of its weight
for row in feature_report(acc, cfg.predictor.features):
    print(f"f{row['feature_id']:<3} mcc {row['mcc']:+.3f}  influence {row['influence_total']:+.2f}"
          f"  abstained {row['abstain']}")

# where did the weights settle?  columns run from -16 to +15
hist = hp.weight_hist
touched = hist.sum(axis=1) - hist[:, 16]
print("non-zero weights per table:", touched.tolist())

# efficiency: fraction of each residency spent doing useful work
for name, res in (("lru", lru), ("hp", hp)):
    st = lifecycle_stats(res.lifecycle)
    print(name, "median efficiency", round(float(np.median(st.efficiency)), 3))

# a first-order packet time estimate with a 100x slow path
app = AppConfig(t_fast=1.0, t_slow=100.0)
for name, res in (("lru", lru), ("hp", hp)):
    print(name, "APPT", round(estimate_appt(app, 1 - res.hit_rate_after(warm)), 2))

"""
How far is LRU from optimal?
============================

Replays the built-in scan/bursty mix through fully associative caches of
growing size and compares LRU with Belady's MIN.  The gap is the room a
smarter replacement or bypass policy could win back.
"""

from flowcorr import CacheConfig, generate_synthetic, scan_and_bursty_spec, simulate

# a one second slice keeps this quick
trace = generate_synthetic(scan_and_bursty_spec(duration_s=1.0))
print(len(trace), "packets")

print(f"{'size':>6} {'LRU':>8} {'MIN':>8} {'gap':>8}")
for size in (32, 64, 128, 256, 512, 1024):
    lru = simulate(trace, CacheConfig(size, 0, "lru")).hit_rate
    opt = simulate(trace, CacheConfig(size, 0, "min")).hit_rate
    print(f"{size:>6} {lru:8.4f} {opt:8.4f} {opt - lru:8.4f}")

# Compulsory misses bound everything: every flow's first packet misses.
res = simulate(trace, CacheConfig(1024, 0, "min"))
print("compulsory miss share:", round(res.compulsory / res.packets, 4))

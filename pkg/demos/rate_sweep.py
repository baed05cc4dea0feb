"""
Accuracy against bits
=====================

Train one variable-rate model and a fixed-rate model per level on the
synthetic task, then compare them level by level. The shortened schedule
keeps this under a minute; use configs/benchmark.toml for the full run.
"""

from artoveq.harness import Benchmark, ExperimentConfig, run_rate_sweep

cfg = ExperimentConfig(epochs_per_level=5, fixed_rate_epochs=5, warmstart_epochs=10)
bench = Benchmark(cfg)
result = run_rate_sweep(cfg, bench, schemes=("artoveq", "fixed_rate"))

var, fixed = result.accuracy("artoveq"), result.accuracy("fixed_rate")
print("bits  single-codebook  fixed-rate")
for level in range(1, cfg.max_level + 1):
    key = (level,) * cfg.num_segments
    print(f"{level:4d}  {var[key]:15.3f}  {fixed[key]:10.3f}")

"""
A time-varying bit pipe
=======================

Each coherence interval draws a per-segment budget b with Pr(b) ~ exp(k b).
An adaptive scheme follows the budget; a fixed-rate scheme scores nothing
whenever its rate does not fit.
"""

import numpy as np

from artoveq import channel as ch

for name, k in ch.SCENARIOS.items():
    print(name, ch.ScenarioSpec(k).probabilities().round(4))

# latency-constrained level choice
print("C=100, tau=0.02 ->", ch.select_level(100, 4, 0.02, 8))
print("C=50,  tau=0.02 ->", ch.select_level(50, 4, 0.02, 8))

# toy schemes: accuracy grows with the level
per_level = {l: 50 + 5 * l for l in range(1, 9)}
schemes = [
    ch.AdaptiveScheme("adaptive", lambda l: per_level[l]),
    ch.FixedRateScheme("fixed 1-bit", 1, lambda: per_level[1]),
    ch.FixedRateScheme("fixed 8-bit", 8, lambda: per_level[8]),
]
for name, k in ch.SCENARIOS.items():
    res = ch.simulate_session(schemes, ch.ScenarioSpec(k), 100, 2000, np.random.default_rng(0))
    print(name, {s: round(a, 3) for s, a in res.accuracy.items()})

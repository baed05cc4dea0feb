"""
Nested and progressive codebooks
================================

One codebook, many rates. The nested codebook reads its level-l codebook off
the first 2**l rows; the progressive one builds level l by adding one of two
difference vectors to every level l-1 word.
"""

import numpy as np

from artoveq.codebook import LBGConfig, NestedCodebook, ProgressiveCodebook, lbg_fit

rng = np.random.default_rng(0)
points = rng.normal(size=(2000, 2))

# grow a 16-word codebook by binary splitting
fit = lbg_fit(points, LBGConfig(16))
print("LBG iterations:", len(fit.distortion_history), "final distortion:", round(fit.distortion, 4))

# every prefix is a smaller codebook
cb = NestedCodebook(fit.codewords)
for level in range(1, cb.max_level + 1):
    words = cb.sub_codebook(level)
    d2 = ((points[:, None] - words[None]) ** 2).sum(-1).min(1).mean()
    print(f"level {level}: {len(words):2d} words, distortion {d2:.4f}")

# progressive: each bit refines the previous reconstruction additively
pcb = ProgressiveCodebook.random(4, 2, rng)
bits = "1011"
for l in range(1, 5):
    print(bits[:l], pcb.codeword(bits[:l]).round(3))

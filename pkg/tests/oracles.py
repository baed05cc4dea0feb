"""Reference implementations written independently of the package.

Nothing here imports ``artoveq``; each function is a deliberately plain
re-derivation used to cross-check the optimised code.
"""

from __future__ import annotations

import math

import numpy as np


# -- clustering ----------------------------------------------------------------


def brute_nearest(x, codewords):
    best, best_d = 0, math.inf
    for i, c in enumerate(codewords):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(x, c))
        if d < best_d:  # strict: ties keep the earlier index
            best, best_d = i, d
    return best, best_d


def lloyd_oracle(points, size, eps=0.01, max_iter=100, tol=1e-5):
    """Split-and-refine k-means with plain Python loops."""
    pts = [tuple(map(float, p)) for p in points]
    n, dim = len(pts), len(pts[0])
    mean = tuple(sum(p[k] for p in pts) / n for k in range(dim))
    book = [mean]

    def cost(book):
        return sum(brute_nearest(p, book)[1] for p in pts) / n

    while len(book) < size:
        book = [tuple(v * (1 + eps) for v in c) for c in book] + [tuple(v * (1 - eps) for v in c) for c in book]
        prev = None
        for _ in range(max_iter):
            cells = [[] for _ in book]
            for p in pts:
                cells[brute_nearest(p, book)[0]].append(p)
            new = []
            for c, members in zip(book, cells):
                if members:
                    new.append(tuple(sum(m[k] for m in members) / len(members) for k in range(dim)))
                else:
                    new.append(c)
            book = new
            cur = cost(book)
            if prev is not None and prev - cur <= tol * prev:
                break
            prev = cur
    return np.array(book)


def eq6_objective(points, codewords):
    """Mean Euclidean (unsquared) distance to the nearest codeword."""
    return sum(math.sqrt(brute_nearest(p, codewords)[1]) for p in points) / len(points)


# -- dense network -------------------------------------------------------------


def leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def mlp_forward(layers, x):
    """``layers`` is a list of (W, b); leaky ReLU between layers. Returns output and pre-activations."""
    h, pre = x, []
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            pre.append(h)
            h = leaky(h)
    return h, pre


def mean_cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def frozen_level_objective(enc, dec, book, x, y, level, M, d, betas, eta, snapshot, frozen):
    """Cumulative multi-level objective with stop-gradient pieces held fixed.

    ``frozen`` holds, per resolution j, the assignment indices, the encoder
    output and the selected codewords computed at the base point. Every
    stop-gradient operand is taken from ``frozen``; live operands come from
    the arguments, so central differences of this function reproduce the
    gradient that the straight-through construction defines.
    """
    xe, _ = mlp_forward(enc, x)
    B = len(x)
    seg = xe.reshape(B * M, d)
    total = 0.0
    for j in range(1, level + 1):
        idx, xe0, z0 = frozen[j]
        offset = z0 - xe0  # sg(z - x)
        q = (seg + offset).reshape(B, M * d)
        logits, _ = mlp_forward(dec, q)
        total += mean_cross_entropy(logits, y)
        z_live = book[idx]
        total += np.sum((xe0 - z_live) ** 2) / B  # ||sg(x) - z||^2
        total += betas[j - 1] * np.sum((seg - z0) ** 2) / B  # beta ||x - sg(z)||^2
    if snapshot is not None and len(snapshot):
        total += eta * np.sum((book[: len(snapshot)] - snapshot) ** 2)
    return total


def activation_signs(enc, dec, x, frozen, M, d):
    """Sign pattern of every hidden pre-activation; used to detect kink crossings."""
    xe, pre_e = mlp_forward(enc, x)
    B = len(x)
    seg = xe.reshape(B * M, d)
    signs = [np.signbit(p) for p in pre_e]
    for idx, xe0, z0 in frozen.values():
        _, pre_d = mlp_forward(dec, (seg + z0 - xe0).reshape(B, M * d))
        signs += [np.signbit(p) for p in pre_d]
    return signs


# -- channel -------------------------------------------------------------------


def budget_pmf(k, support=range(1, 9)):
    w = [math.exp(k * b) for b in support]
    s = sum(w)
    return [v / s for v in w]


def largest_feasible_level(capacity, M, tau_max, L, rule):
    """Linear scan over 1..L using exact rational arithmetic where possible."""
    best = None
    for level in range(1, L + 1):
        lat = level / (M * capacity) if rule == "eq4" else M * level / capacity
        if lat <= tau_max * (1 + 1e-12):
            best = level
    return best

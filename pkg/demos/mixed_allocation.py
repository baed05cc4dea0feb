"""
Mixed per-segment resolutions
=============================

With M segments and L levels, any total budget from M to M*L bits can be
spent. The first segment gets the largest share.
"""

from artoveq.harness import allocation_for_budget, attainable_budgets

M, L = 4, 8
for budget in attainable_budgets(M, L):
    alloc = allocation_for_budget(budget, M, L)
    same = f"  identical {(budget // M,) * M}" if budget % M == 0 else ""
    print(f"{budget:2d} bits -> {alloc}{same}")

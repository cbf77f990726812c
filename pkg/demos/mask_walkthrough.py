"""Block-wise masks on the 14x14 patch grid: a few drawn plans, then statistics over many."""
import numpy as np

from trvmim.mim import blockwise_mask

rng = np.random.default_rng(0)
for i in range(3):
    plan = blockwise_mask(14, 14, 0.4, rng)
    print(f"plan {i}: {plan.count} of 196 masked ({plan.fraction:.3f}), rects (top, left, h, w) = {plan.rects}")
    for row in plan.masked:
        print("  " + "".join("#" if m else "." for m in row))
    print()

plans = [blockwise_mask(14, 14, 0.4, rng) for _ in range(10_000)]
counts = np.array([p.count for p in plans])
areas = np.array([h * w for p in plans for _, _, h, w in p.rects])
print(f"10000 plans: count min {counts.min()} max {counts.max()}, mean fraction {counts.mean() / 196:.4f}")
print(f"rectangles: {len(areas)} drawn, area min {areas.min()} mean {areas.mean():.1f} max {areas.max()}")
values, freq = np.unique(counts, return_counts=True)
print("count histogram:", {int(v): int(f) for v, f in zip(values, freq)})

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..arch.config import ConfigError

MIN_BLOCK = 16
ASPECT_RANGE = (0.3, 1 / 0.3)
_MAX_ATTEMPTS = 10_000


@dataclass
class MaskPlan:
    grid_h: int
    grid_w: int
    masked: np.ndarray  # bool [grid_h, grid_w]
    target_ratio: float
    rects: list = field(default_factory=list)  # (top, left, h, w) in draw order

    @property
    def count(self) -> int:
        return int(self.masked.sum())

    @property
    def fraction(self) -> float:
        return self.count / self.masked.size

    @property
    def target_count(self) -> int:
        return math.ceil(self.target_ratio * self.grid_h * self.grid_w - 1e-9)

    def flat(self) -> np.ndarray:
        return self.masked.reshape(-1)


def blockwise_mask(grid_h: int, grid_w: int, ratio: float, rng: np.random.Generator,
                   min_block: int = MIN_BLOCK, aspect=ASPECT_RANGE) -> MaskPlan:
    """Union random rectangles until at least ``ceil(ratio * area)`` cells are masked.

    Each rectangle has area in ``[min_block, max(min_block, still_needed)]`` with a
    log-uniform aspect ratio, so the final count overshoots the target by less
    than ``min_block`` cells.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask_ratio: must lie in (0, 1), got {ratio}")
    area = grid_h * grid_w
    if area < min_block:
        raise ConfigError(f"mask grid {grid_h}x{grid_w} smaller than min block {min_block}")
    target = math.ceil(ratio * area - 1e-9)
    log_lo, log_hi = math.log(aspect[0]), math.log(aspect[1])
    masked = np.zeros((grid_h, grid_w), dtype=bool)
    rects = []
    count = 0
    while count < target:
        cap = max(min_block, target - count)
        for _ in range(_MAX_ATTEMPTS):
            want = rng.uniform(min_block, cap) if cap > min_block else float(min_block)
            ar = math.exp(rng.uniform(log_lo, log_hi))
            h = int(round(math.sqrt(want * ar)))
            w = int(round(math.sqrt(want / ar)))
            if min_block <= h * w <= cap and h <= grid_h and w <= grid_w:
                break
        else:
            raise ConfigError(f"cannot place a {min_block}-cell block on a {grid_h}x{grid_w} grid")
        top = int(rng.integers(0, grid_h - h + 1))
        left = int(rng.integers(0, grid_w - w + 1))
        masked[top:top + h, left:left + w] = True
        rects.append((top, left, h, w))
        count = int(masked.sum())
    return MaskPlan(grid_h, grid_w, masked, ratio, rects)

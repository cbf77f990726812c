from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SyntheticSample:
    sample_id: int
    patches: np.ndarray  # [grid_h * grid_w, patch_dim], values in [-1, 1)


def sample_patches(seed: int, sample_id: int, n_tokens: int, patch_dim: int) -> np.ndarray:
    """Counter-based draw: Philox keyed by (seed, sample_id), so any sample is reproducible alone."""
    if not (0 <= seed < 2**64 and 0 <= sample_id < 2**64):
        raise ValueError("seed and sample_id must fit in uint64")
    gen = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(sample_id)))
    out = 2.0 * gen.random((n_tokens, patch_dim)) - 1.0
    out.flags.writeable = False
    return out


def synth_dataset(seed: int, n_samples: int, grid: tuple[int, int], patch_dim: int) -> list[SyntheticSample]:
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    n_tok = grid[0] * grid[1]
    return [SyntheticSample(i, sample_patches(seed, i, n_tok, patch_dim)) for i in range(n_samples)]

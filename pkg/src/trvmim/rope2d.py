"""Axial 2D rotary position embedding for patch grids.

Layout of one head vector of size ``head_dim``: the first half rotates with the
row coordinate, the second half with the column coordinate. Inside a half,
channels ``(2j, 2j+1)`` form a pair rotated by ``coord * base**(-2j / (head_dim/2))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, as_tensor, custom_op


class RopeConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RopeTable:
    grid_h: int
    grid_w: int
    head_dim: int
    base: float = 10000.0
    # [grid_h, grid_w, head_dim // 2], one entry per channel pair
    cos: np.ndarray = field(repr=False, default=None)
    sin: np.ndarray = field(repr=False, default=None)

    def angles(self, row: int, col: int) -> np.ndarray:
        return np.arctan2(self.sin[row, col], self.cos[row, col])


def axis_frequencies(head_dim: int, base: float = 10000.0) -> np.ndarray:
    half = head_dim // 2
    j = np.arange(half // 2, dtype=np.float64)
    return base ** (-2.0 * j / half)


def build_rope_table(grid_h: int, grid_w: int, head_dim: int, base: float = 10000.0) -> RopeTable:
    if head_dim % 4 != 0 or head_dim <= 0:
        raise RopeConfigError(f"head_dim must be a positive multiple of 4, got {head_dim}")
    if grid_h < 1 or grid_w < 1:
        raise RopeConfigError(f"grid extents must be >= 1, got {grid_h}x{grid_w}")
    freqs = axis_frequencies(head_dim, base)
    rows = np.arange(grid_h, dtype=np.float64)[:, None, None] * freqs
    cols = np.arange(grid_w, dtype=np.float64)[None, :, None] * freqs
    theta = np.concatenate([np.broadcast_to(rows, (grid_h, grid_w, freqs.size)),
                            np.broadcast_to(cols, (grid_h, grid_w, freqs.size))], axis=-1)
    cos, sin = np.cos(theta), np.sin(theta)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return RopeTable(grid_h, grid_w, head_dim, float(base), cos, sin)


def grid_positions(grid_h: int, grid_w: int) -> list[tuple[int, int]]:
    """Row-major (row, col) coordinates of every patch."""
    return [(r, c) for r in range(grid_h) for c in range(grid_w)]


def _gather(table: RopeTable, positions) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    rows, cols = pos[:, 0], pos[:, 1]
    bad = (rows < 0) | (rows >= table.grid_h) | (cols < 0) | (cols >= table.grid_w)
    if bad.any():
        r, c = pos[np.argmax(bad)]
        raise IndexError(f"position ({r}, {c}) outside {table.grid_h}x{table.grid_w} grid")
    return table.cos[rows, cols], table.sin[rows, cols]


def apply_rope(v, table: RopeTable, positions) -> Tensor:
    """Rotate ``v`` of shape ``[..., tokens, heads, head_dim]`` by per-token angles."""
    v = as_tensor(v)
    if v.ndim < 3 or v.shape[-1] != table.head_dim:
        raise ValueError(f"expected [..., tokens, heads, {table.head_dim}], got {v.shape}")
    n_tok = v.shape[-3]
    if len(positions) != n_tok:
        raise ValueError(f"{len(positions)} positions for {n_tok} tokens")
    cos, sin = _gather(table, positions)
    # broadcast over heads: [tokens, 1, pairs]
    cos = cos[:, None, :]
    sin = sin[:, None, :]
    pairs = v.data.reshape(v.shape[:-1] + (table.head_dim // 2, 2))
    x0, x1 = pairs[..., 0], pairs[..., 1]
    out = np.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], axis=-1).reshape(v.shape)

    def back(g):
        gp = g.reshape(pairs.shape)
        g0, g1 = gp[..., 0], gp[..., 1]
        return (np.stack([g0 * cos + g1 * sin, g1 * cos - g0 * sin], axis=-1).reshape(v.shape),)
    return custom_op((v,), out, back)

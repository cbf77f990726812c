from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor


def gradient(f: Callable[[list[Tensor]], Tensor], params: Sequence[Tensor]) -> list[Tensor]:
    """Reverse-mode gradient of scalar ``f(params)`` with respect to every param."""
    leaves = [p if p.requires_grad else Tensor(p.data, requires_grad=True) for p in params]
    with GradTape() as tape:
        out = f(list(leaves))
    return tape.gradient(out, leaves)


_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((2.0, -1.0 / 12), (1.0, 8.0 / 12), (-1.0, -8.0 / 12), (-2.0, 1.0 / 12)),
}


def finite_diff_grad(f: Callable[[list[Tensor]], Tensor], params: Sequence[Tensor],
                     h: float = 1e-5, order: int = 2) -> list[Tensor]:
    """Central differences for each coordinate of each param.

    ``order=2`` is ``(f(p+h) - f(p-h)) / 2h``; ``order=4`` uses the five-point
    stencil. ``f`` runs outside of any tape.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}, got {order}")
    stencil = _STENCILS[order]
    base = [np.array(p.data) for p in params]
    frozen = [Tensor._wrap(b.copy()) for b in base]
    grads = []
    for i, b in enumerate(base):
        g = np.empty_like(b)
        flat = g.reshape(-1)
        work = b.copy()
        wflat = work.reshape(-1)
        for j in range(b.size):
            orig = wflat[j]
            acc = 0.0
            for offset, weight in stencil:
                wflat[j] = orig + offset * h
                args = list(frozen)
                args[i] = Tensor._wrap(work.copy())
                acc += weight * float(f(args).data)
            wflat[j] = orig
            flat[j] = acc / h
        grads.append(Tensor._wrap(g))
    return grads


def max_rel_error(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor) over all entries of (lists of) arrays."""
    if isinstance(a, (list, tuple)):
        if not a:
            return 0.0
        return max(max_rel_error(x, y, floor) for x, y in zip(a, b))
    a = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..numerics import ShapeError, Tensor
from .masking import MaskPlan

COS_EPS = 1e-8


def mask_array(plans, n_tokens: int) -> np.ndarray:
    """Bool mask ``[tokens]`` or ``[batch, tokens]`` from plan(s) or a raw array."""
    if isinstance(plans, MaskPlan):
        m = plans.flat()
    elif isinstance(plans, (list, tuple)) and plans and isinstance(plans[0], MaskPlan):
        m = np.stack([p.flat() for p in plans])
    else:
        m = np.asarray(plans, dtype=bool)
    if m.shape[-1] != n_tokens:
        raise ShapeError(f"mask covers {m.shape[-1]} tokens, input has {n_tokens}")
    return m


def corrupt(tokens, plans, mask_token) -> Tensor:
    """Replace masked token rows by the shared mask embedding."""
    tokens = nx.as_tensor(tokens)
    m = mask_array(plans, tokens.shape[-2])
    if m.ndim == 2 and (tokens.ndim != 3 or tokens.shape[0] != m.shape[0]):
        raise ShapeError(f"{m.shape[0]} plans for token batch of shape {tokens.shape}")
    return nx.where(m[..., None], mask_token, tokens)


def mim_head(features, gamma, beta, proj, eps: float = 1e-6) -> Tensor:
    """LayerNorm then a bias-free projection to the teacher width."""
    return nx.matmul(nx.layer_norm(features, gamma, beta, eps), proj)


def neg_cosine_loss(pred, target, plans) -> Tensor:
    """Mean of -cos(pred, target) over all masked positions in the batch.

    The norm product in the denominator is floored at ``COS_EPS`` so zero
    vectors give a zero loss term instead of a division by zero.
    """
    pred, target = nx.as_tensor(pred), nx.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    m = mask_array(plans, pred.shape[-2]).astype(np.float64)
    if m.shape != pred.shape[:-1]:
        raise ShapeError(f"mask shape {m.shape} does not match tokens {pred.shape[:-1]}")
    n = m.sum()
    if n == 0:
        raise ValueError("neg_cosine_loss: no masked positions")
    dot = (pred * target).sum(axis=-1)
    sq = (pred * pred).sum(axis=-1) * (target * target).sum(axis=-1)
    ok = sq.data > COS_EPS * COS_EPS
    # a floor rather than an added eps, so scaling pred leaves the loss unchanged;
    # sqrt only sees safe values, else its backward at 0 turns the masked branch into nan
    norms = nx.sqrt(nx.where(ok, sq, 1.0))
    cos = dot / nx.where(ok, norms, COS_EPS)
    return -(cos * m).sum() / n

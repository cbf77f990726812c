from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..arch import ForwardContext, TrVConfig, encoder_forward, layer_group
from ..arch.layers import linear
from ..numerics import GradTape, Tensor
from .masking import MaskPlan, blockwise_mask
from .objective import corrupt, mim_head, neg_cosine_loss
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr, layerwise_lr


def mim_forward(cfg: TrVConfig, params: Mapping[str, Tensor], patches, masks, ctx: ForwardContext) -> Tensor:
    """Patches ``[B, T, patch_dim]`` -> predicted teacher features ``[B, T, teacher_dim]``."""
    tokens = linear(patches, params["patch_embed.weight"], params["patch_embed.bias"])
    if cfg.mask_token_enabled:
        tokens = corrupt(tokens, masks, params["mask_token"])
    feats = encoder_forward(cfg, params, tokens, ctx=ctx)
    return mim_head(feats, params["head.norm.weight"], params["head.norm.bias"],
                    params["head.proj.weight"], cfg.ln_eps)


def mim_loss(cfg: TrVConfig, params: Mapping[str, Tensor], patches, masks, targets,
             ctx: ForwardContext) -> Tensor:
    pred = mim_forward(cfg, params, patches, masks, ctx)
    return neg_cosine_loss(pred, targets, masks)


def sample_masks(cfg: TrVConfig, n: int, ratio: float, rng: np.random.Generator) -> list[MaskPlan]:
    return [blockwise_mask(cfg.grid_h, cfg.grid_w, ratio, rng) for _ in range(n)]


def lr_scales(cfg: TrVConfig, names, decay: float) -> dict[str, float]:
    groups = cfg.depth + 2
    return {n: layerwise_lr(1.0, decay, layer_group(n, cfg.depth), groups) for n in names}


def pretrain_step(cfg: TrVConfig, params: Mapping[str, np.ndarray], batch: Sequence, teacher,
                  opt_state: OptimizerState, schedule: LrSchedule, step: int,
                  rng: np.random.Generator, mask_ratio: float = 0.4):
    """One MIM update on ``batch``; returns ``(metrics, new_params, new_opt_state)``.

    Every sample gets its own mask plan from ``rng``; drop-path draws follow from
    the same generator. The loss averages over all masked tokens in the batch.
    """
    plans = sample_masks(cfg, len(batch), mask_ratio, rng)
    patches = np.stack([np.asarray(s.patches) for s in batch])
    targets = np.stack([teacher.features(s) for s in batch])
    ctx = ForwardContext.for_config(cfg, training=True, rng=rng)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    with GradTape() as tape:
        loss = mim_loss(cfg, leaves, patches, plans, targets, ctx)
    names = list(leaves)
    grads = dict(zip(names, (g.data for g in tape.gradient(loss, [leaves[k] for k in names]))))
    lr = cosine_lr(step, schedule)
    scales = None if schedule.layer_decay == 1.0 else lr_scales(cfg, names, schedule.layer_decay)
    opt_state, new_params = adamw_step(opt_state, params, grads, lr, scales)
    metrics = {
        "step": int(step),
        "loss": float(loss.data),
        "lr": float(lr),
        "masked_fraction": float(np.mean([p.fraction for p in plans])),
    }
    return metrics, new_params, opt_state

from __future__ import annotations

import math

import numpy as np

from .config import TrVConfig

MASK_TOKEN_STD = 0.02
BEIT_STD = 0.02


def init_xavier_normal(shape, rng: np.random.Generator) -> np.ndarray:
    """N(0, 2 / (dim_in + dim_out)) for a weight stored as ``(dim_in, dim_out)``."""
    if len(shape) != 2:
        raise ValueError(f"xavier normal expects a 2D (dim_in, dim_out) shape, got {shape}")
    std = math.sqrt(2.0 / (shape[0] + shape[1]))
    return rng.standard_normal(shape) * std


def trunc_normal(shape, rng: np.random.Generator, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) truncated to +-bound*std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def rel_pos_index(grid_h: int, grid_w: int) -> np.ndarray:
    """[T, T] index into a ((2h-1)*(2w-1))-row relative bias table."""
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    dr = rows[:, None] - rows[None, :] + grid_h - 1
    dc = cols[:, None] - cols[None, :] + grid_w - 1
    return dr * (2 * grid_w - 1) + dc


def param_shapes(cfg: TrVConfig) -> dict[str, tuple]:
    """Ordered name -> shape map of every trainable parameter."""
    w, h = cfg.width, cfg.ffn_hidden
    shapes: dict[str, tuple] = {
        "patch_embed.weight": (cfg.patch_dim, w),
        "patch_embed.bias": (w,),
    }
    if cfg.mask_token_enabled:
        shapes["mask_token"] = (w,)
    if cfg.cls_token:
        shapes["cls_token"] = (w,)
    if cfg.pos_embed == "abs_pe":
        shapes["pos_embed"] = (cfg.num_patches + int(cfg.cls_token), w)
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes[p + "norm1.weight"] = (w,)
        shapes[p + "norm1.bias"] = (w,)
        for name in ("q", "k", "v"):
            shapes[p + f"attn.{name}.weight"] = (w, w)
            if cfg.qkv_bias:
                shapes[p + f"attn.{name}.bias"] = (w,)
        shapes[p + "attn.proj.weight"] = (w, w)
        shapes[p + "attn.proj.bias"] = (w,)
        if cfg.pos_embed == "rel_pe":
            shapes[p + "attn.rel_pos_table"] = ((2 * cfg.grid_h - 1) * (2 * cfg.grid_w - 1), cfg.num_heads)
        shapes[p + "norm2.weight"] = (w,)
        shapes[p + "norm2.bias"] = (w,)
        if cfg.ffn_type == "mlp":
            shapes[p + "ffn.w1"] = (w, h)
            if cfg.ffn_bias:
                shapes[p + "ffn.b1"] = (h,)
            out_w = "ffn.w2"
        else:
            shapes[p + "ffn.u"] = (w, h)
            shapes[p + "ffn.v"] = (w, h)
            if cfg.ffn_bias:
                shapes[p + "ffn.bu"] = (h,)
                shapes[p + "ffn.bv"] = (h,)
            out_w = "ffn.w"
        if cfg.norm_scheme == "sub_ln":
            shapes[p + "ffn.norm.weight"] = (h,)
            shapes[p + "ffn.norm.bias"] = (h,)
        shapes[p + out_w] = (h, w)
        if cfg.ffn_bias:
            shapes[p + "ffn.b_out"] = (w,)
    shapes["head.norm.weight"] = (w,)
    shapes["head.norm.bias"] = (w,)
    shapes["head.proj.weight"] = (w, cfg.teacher_dim)
    return shapes


def _is_residual_out(name: str) -> bool:
    return name.endswith("attn.proj.weight") or name.endswith("ffn.w2") or name.endswith("ffn.w")


def init_params(cfg: TrVConfig, seed_or_rng=0) -> dict[str, np.ndarray]:
    """Fresh parameters for ``cfg``.

    xavier_normal: every matrix weight ~ N(0, 2/(in+out)).
    beit_style: truncated N(0, 0.02^2), residual output projections of block i
    divided by sqrt(2 * (i + 1)).
    In both schemes biases start at 0, LN gains at 1, the mask/cls tokens and
    the absolute position table at N(0, 0.02^2), relative bias tables at 0.
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if name in ("mask_token", "cls_token"):
            arr = rng.standard_normal(shape) * MASK_TOKEN_STD
        elif name == "pos_embed":
            arr = trunc_normal(shape, rng, BEIT_STD)
        elif leaf == "rel_pos_table":
            arr = np.zeros(shape)
        elif ".norm" in name or name.startswith("head.norm"):
            arr = np.ones(shape) if leaf == "weight" else np.zeros(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        elif cfg.init_scheme == "xavier_normal":
            arr = init_xavier_normal(shape, rng)
        else:
            arr = trunc_normal(shape, rng, BEIT_STD)
            if _is_residual_out(name):
                layer_id = int(name.split(".")[1]) + 1
                arr = arr / math.sqrt(2.0 * layer_id)
        params[name] = arr
    return params


def no_weight_decay(name: str) -> bool:
    """LN params, biases, the mask/cls tokens and position tables are not decayed."""
    leaf = name.split(".")[-1]
    if name in ("mask_token", "cls_token", "pos_embed") or leaf == "rel_pos_table":
        return True
    if "norm" in name:
        return True
    return leaf == "bias" or leaf.startswith("b")


def layer_group(name: str, depth: int) -> int:
    """0 = embedding-side params, 1..depth = blocks, depth+1 = head."""
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    if name.startswith("head."):
        return depth + 1
    return 0

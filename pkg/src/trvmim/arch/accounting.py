"""Closed-form parameter and multiply-accumulate counts."""
from __future__ import annotations

from .config import TrVConfig


def ffn_param_count(width: int, hidden: int, ffn_type: str, inner_ln: bool = False, bias: bool = False) -> int:
    if ffn_type == "mlp":
        n = 2 * width * hidden + (hidden + width if bias else 0)
    else:
        n = 3 * width * hidden + (2 * hidden + width if bias else 0)
    return n + (2 * hidden if inner_ln else 0)


def block_param_count(cfg: TrVConfig) -> int:
    w = cfg.width
    attn = 4 * w * w + w + (3 * w if cfg.qkv_bias else 0)
    if cfg.pos_embed == "rel_pe":
        attn += (2 * cfg.grid_h - 1) * (2 * cfg.grid_w - 1) * cfg.num_heads
    ffn = ffn_param_count(w, cfg.ffn_hidden, cfg.ffn_type, cfg.norm_scheme == "sub_ln", cfg.ffn_bias)
    return attn + ffn + 4 * w


def count_params(cfg: TrVConfig, include_head: bool = True) -> int:
    """Trainable parameters: patch embed, tokens, position table, blocks and (optionally) the MIM head."""
    w = cfg.width
    total = cfg.patch_dim * w + w
    total += w * (int(cfg.mask_token_enabled) + int(cfg.cls_token))
    if cfg.pos_embed == "abs_pe":
        total += (cfg.num_patches + int(cfg.cls_token)) * w
    total += cfg.depth * block_param_count(cfg)
    if include_head:
        total += 2 * w + w * cfg.teacher_dim
    return total


def count_macs(cfg: TrVConfig, n_tokens: int) -> int:
    """Multiply-accumulates for one forward over ``n_tokens`` patches (head excluded)."""
    if n_tokens < 0:
        raise ValueError(f"n_tokens must be >= 0, got {n_tokens}")
    n, w, h = n_tokens, cfg.width, cfg.ffn_hidden
    ffn = (3 if cfg.ffn_type == "swiglu" else 2) * w * h * n
    per_block = 4 * w * w * n + 2 * n * n * w + ffn
    return cfg.depth * per_block + n * cfg.patch_dim * w

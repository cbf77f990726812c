from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import numerics as nx
from ..numerics import ShapeError, Tensor
from ..rope2d import RopeTable, apply_rope, build_rope_table, grid_positions
from .config import ConfigError, TrVConfig
from .init import param_shapes, rel_pos_index


@dataclass
class ForwardContext:
    positions: Sequence[tuple[int, int]]
    rope: Optional[RopeTable] = None
    rel_index: Optional[np.ndarray] = None
    training: bool = False
    rng: Optional[np.random.Generator] = None

    @classmethod
    def for_config(cls, cfg: TrVConfig, positions=None, training=False, rng=None) -> "ForwardContext":
        if positions is None:
            positions = grid_positions(cfg.grid_h, cfg.grid_w)
        rope = rel = None
        if cfg.pos_embed == "rope2d":
            rope = build_rope_table(cfg.grid_h, cfg.grid_w, cfg.head_dim, cfg.rope_base)
        elif cfg.pos_embed == "rel_pe":
            full = rel_pos_index(cfg.grid_h, cfg.grid_w)
            flat = [r * cfg.grid_w + c for r, c in positions]
            rel = full[np.ix_(flat, flat)]
        return cls(positions=list(positions), rope=rope, rel_index=rel, training=training, rng=rng)


def sub_params(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def linear(x, weight, bias=None) -> Tensor:
    y = nx.matmul(x, weight)
    return y if bias is None else y + bias


def mlp_ffn(x, w1, w2, b1=None, b2=None) -> Tensor:
    """GELU(x W1) W2, biases optional and off by default."""
    return linear(nx.gelu(linear(x, w1, b1)), w2, b2)


def swiglu_ffn(x, u, v, w, inner_ln=None, bu=None, bv=None, bw=None, eps: float = 1e-6) -> Tensor:
    """(SiLU(x U) * x V) W; with ``inner_ln=(gamma, beta)`` the gated hidden is normalized first."""
    hidden = nx.silu(linear(x, u, bu)) * linear(x, v, bv)
    if inner_ln is not None:
        hidden = nx.layer_norm(hidden, inner_ln[0], inner_ln[1], eps)
    return linear(hidden, w, bw)


def ffn(x, bp: Mapping[str, Tensor], cfg: TrVConfig) -> Tensor:
    inner = None
    if cfg.norm_scheme == "sub_ln":
        inner = (bp["ffn.norm.weight"], bp["ffn.norm.bias"])
    if cfg.ffn_type == "swiglu":
        return swiglu_ffn(x, bp["ffn.u"], bp["ffn.v"], bp["ffn.w"], inner,
                          bp.get("ffn.bu"), bp.get("ffn.bv"), bp.get("ffn.b_out"), cfg.ln_eps)
    h = nx.gelu(linear(x, bp["ffn.w1"], bp.get("ffn.b1")))
    if inner is not None:
        h = nx.layer_norm(h, inner[0], inner[1], cfg.ln_eps)
    return linear(h, bp["ffn.w2"], bp.get("ffn.b_out"))


def mhsa(x, bp: Mapping[str, Tensor], cfg: TrVConfig, ctx: ForwardContext) -> Tensor:
    """Multi-head self-attention over ``x[..., tokens, width]``.

    No normalization inside the attention branch. RoPE (if configured) rotates
    q and k after the head split; a relative bias table (``rel_pe``) is added
    to the logits instead.
    """
    x = nx.as_tensor(x)
    n_tok, width = x.shape[-2], x.shape[-1]
    if width != cfg.width:
        raise ShapeError(f"mhsa: expected width {cfg.width}, got {width}")
    lead = x.shape[:-2]
    heads, hd = cfg.num_heads, cfg.head_dim
    n_pos = len(ctx.positions) + (1 if cfg.cls_token else 0)
    if n_pos != n_tok:
        raise ShapeError(f"mhsa: {n_tok} tokens but {len(ctx.positions)} positions")

    def split(t):
        return t.reshape(lead + (n_tok, heads, hd))

    q = split(linear(x, bp["attn.q.weight"], bp.get("attn.q.bias")))
    k = split(linear(x, bp["attn.k.weight"], bp.get("attn.k.bias")))
    v = split(linear(x, bp["attn.v.weight"], bp.get("attn.v.bias")))
    if ctx.rope is not None:
        q, k = _rope_qk(q, k, ctx, cfg.cls_token)
    nd = len(lead)
    perm = tuple(range(nd)) + (nd + 1, nd, nd + 2)  # -> [..., heads, tokens, hd]
    q, k, v = (t.transpose(perm) for t in (q, k, v))
    kt = k.transpose(tuple(range(nd + 1)) + (nd + 2, nd + 1))
    scores = nx.matmul(q * (1.0 / np.sqrt(hd)), kt)
    if ctx.rel_index is not None:
        bias = nx.take(bp["attn.rel_pos_table"], ctx.rel_index, axis=0)  # [T, T, heads]
        scores = scores + bias.transpose((2, 0, 1))
    attn = nx.softmax_lastdim(scores)
    out = nx.matmul(attn, v).transpose(perm).reshape(lead + (n_tok, width))
    return linear(out, bp["attn.proj.weight"], bp["attn.proj.bias"])


def _rope_qk(q, k, ctx: ForwardContext, has_cls: bool):
    positions = ctx.positions
    if has_cls:
        # zero angle at (0, 0): the class token passes through unrotated
        positions = [(0, 0)] + list(positions)
    return apply_rope(q, ctx.rope, positions), apply_rope(k, ctx.rope, positions)


def drop_path(branch, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Stochastic depth: zero a residual branch per sample with prob ``rate``, rescale the rest.

    ``branch`` is ``[tokens, width]`` for a single sample or ``[batch, tokens, width]``.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"drop_path rate must lie in [0, 1), got {rate}")
    branch = nx.as_tensor(branch)
    if not training or rate == 0.0:
        return branch
    if rng is None:
        raise ValueError("drop_path in training mode needs an rng")
    n = branch.shape[0] if branch.ndim >= 3 else 1
    keep = (rng.random(n) >= rate).astype(np.float64) / (1.0 - rate)
    scale = keep.reshape((n,) + (1,) * (branch.ndim - 1)) if branch.ndim >= 3 else keep[0]
    return branch * scale


def trv_block(x, bp: Mapping[str, Tensor], cfg: TrVConfig, ctx: ForwardContext) -> Tensor:
    eps = cfg.ln_eps
    rate = cfg.drop_path_rate
    if cfg.norm_scheme == "post_ln":
        x = nx.layer_norm(x + drop_path(mhsa(x, bp, cfg, ctx), rate, ctx.training, ctx.rng),
                          bp["norm1.weight"], bp["norm1.bias"], eps)
        return nx.layer_norm(x + drop_path(ffn(x, bp, cfg), rate, ctx.training, ctx.rng),
                             bp["norm2.weight"], bp["norm2.bias"], eps)
    h = nx.layer_norm(x, bp["norm1.weight"], bp["norm1.bias"], eps)
    x = x + drop_path(mhsa(h, bp, cfg, ctx), rate, ctx.training, ctx.rng)
    h = nx.layer_norm(x, bp["norm2.weight"], bp["norm2.bias"], eps)
    return x + drop_path(ffn(h, bp, cfg), rate, ctx.training, ctx.rng)


def check_params(cfg: TrVConfig, params: Mapping) -> None:
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in params]
    if missing:
        raise ConfigError(f"params missing entries: {', '.join(missing[:5])}")
    for name, shape in expected.items():
        got = tuple(params[name].shape)
        if got != tuple(shape):
            raise ShapeError(f"param {name!r}: expected shape {tuple(shape)}, got {got}")


def encoder_forward(cfg: TrVConfig, params: Mapping[str, Tensor], tokens, positions=None,
                    training: bool = False, rng=None, ctx: Optional[ForwardContext] = None) -> Tensor:
    """Run the block stack on embedded patch tokens ``[..., tokens, width]``.

    Adds the absolute position table and class token when configured; the
    returned features cover patch tokens only and carry no final norm.
    """
    check_params(cfg, params)
    x = nx.as_tensor(tokens)
    if ctx is None:
        ctx = ForwardContext.for_config(cfg, positions, training, rng)
    n_tok = x.shape[-2]
    if n_tok != len(ctx.positions):
        raise ShapeError(f"encoder: {n_tok} tokens but {len(ctx.positions)} positions")
    if cfg.cls_token:
        lead = x.shape[:-2]
        cls = nx.reshape(params["cls_token"], (1,) * len(lead) + (1, cfg.width))
        cls = cls + nx.as_tensor(np.zeros(lead + (1, cfg.width)))
        x = _concat_tokens(cls, x)
    if cfg.pos_embed == "abs_pe":
        pe = params["pos_embed"]
        if cfg.cls_token:
            flat = [0] + [1 + r * cfg.grid_w + c for r, c in ctx.positions]
        else:
            flat = [r * cfg.grid_w + c for r, c in ctx.positions]
        x = x + nx.take(pe, flat, axis=0)
    for i in range(cfg.depth):
        x = trv_block(x, sub_params(params, f"blocks.{i}."), cfg, ctx)
    if cfg.cls_token:
        x = _drop_first_token(x)
    return x


def _concat_tokens(first: Tensor, rest: Tensor) -> Tensor:
    n = rest.shape[-2]
    out = np.concatenate([first.data, rest.data], axis=-2)

    def back(g):
        return g[..., :1, :], g[..., 1:, :]
    assert first.shape[-2] == 1 and out.shape[-2] == n + 1
    return nx.custom_op((first, rest), out, back)


def _drop_first_token(x: Tensor) -> Tensor:
    def back(g):
        full = np.zeros(x.shape)
        full[..., 1:, :] = g
        return (full,)
    return nx.custom_op((x,), x.data[..., 1:, :], back)

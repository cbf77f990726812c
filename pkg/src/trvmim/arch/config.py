from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

FFN_TYPES = ("mlp", "swiglu")
NORM_SCHEMES = ("pre_ln", "sub_ln", "post_ln")
POS_EMBEDS = ("abs_pe", "rope2d", "rel_pe")
INIT_SCHEMES = ("beit_style", "xavier_normal")


class ConfigError(ValueError):
    pass


def ffn_hidden_dim(width: int, ffn_type: str) -> int:
    """Default FFN hidden size: 4x for the GELU MLP, 2/3 of that for SwiGLU."""
    if width < 1:
        raise ConfigError(f"width must be >= 1, got {width}")
    if ffn_type == "mlp":
        return 4 * width
    if ffn_type == "swiglu":
        return (8 * width) // 3
    raise ConfigError(f"unknown ffn_type {ffn_type!r}")


@dataclass(frozen=True)
class TrVConfig:
    depth: int = 12
    width: int = 768
    num_heads: int = 12
    ffn_type: str = "swiglu"
    norm_scheme: str = "sub_ln"
    pos_embed: str = "rope2d"
    init_scheme: str = "xavier_normal"
    patch_size: int = 14
    in_chans: int = 3
    grid_h: int = 16
    grid_w: int = 16
    ffn_hidden: Optional[int] = None
    drop_path_rate: float = 0.0
    mask_token_enabled: bool = True
    teacher_dim: int = 1024
    qkv_bias: bool = True
    ffn_bias: bool = False
    cls_token: bool = False
    rope_base: float = 10000.0
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.ffn_hidden is None:
            if self.ffn_type not in FFN_TYPES:
                raise ConfigError(f"ffn_type: expected one of {FFN_TYPES}, got {self.ffn_type!r}")
            object.__setattr__(self, "ffn_hidden", ffn_hidden_dim(self.width, self.ffn_type))
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.width // self.num_heads

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_chans

    def validate(self) -> None:
        for key, options in (("ffn_type", FFN_TYPES), ("norm_scheme", NORM_SCHEMES),
                             ("pos_embed", POS_EMBEDS), ("init_scheme", INIT_SCHEMES)):
            if getattr(self, key) not in options:
                raise ConfigError(f"{key}: expected one of {options}, got {getattr(self, key)!r}")
        for key in ("width", "num_heads", "patch_size", "in_chans", "grid_h", "grid_w",
                    "ffn_hidden", "teacher_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.depth < 0:
            raise ConfigError(f"depth: must be >= 0, got {self.depth}")
        if self.width % self.num_heads:
            raise ConfigError(f"width: {self.width} not divisible by heads={self.num_heads}")
        if self.pos_embed == "rope2d" and self.head_dim % 4:
            raise ConfigError(f"heads: head_dim {self.head_dim} must be a multiple of 4 for rope2d")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ConfigError(f"drop_path: must lie in [0, 1), got {self.drop_path_rate}")
        if self.cls_token and self.pos_embed == "rel_pe":
            raise ConfigError("cls_token: not supported together with pos_embed=rel_pe")
        if self.ln_eps < 0:
            raise ConfigError(f"ln_eps: must be >= 0, got {self.ln_eps}")

    def replace(self, **changes) -> "TrVConfig":
        if ("width" in changes or "ffn_type" in changes) and "ffn_hidden" not in changes:
            changes["ffn_hidden"] = None
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


# patch 14, 224px input -> 16x16 grid at pre-training resolution
_TABLE_ROWS = {
    "ti": dict(depth=12, width=192, num_heads=3, norm_scheme="pre_ln"),
    "s": dict(depth=12, width=384, num_heads=6, norm_scheme="pre_ln"),
    "b": dict(depth=12, width=768, num_heads=12, norm_scheme="sub_ln"),
    "l": dict(depth=24, width=1024, num_heads=16, norm_scheme="sub_ln", drop_path_rate=0.1),
}

# dataset images, pre-training epochs, peak lr, batch size per variant;
# warmup is one epoch and the step counts follow from images * epochs / batch
_PT_SCHEDULE = {
    "ti": (14_200_000, 240, 3e-3, 4096),
    "s": (14_200_000, 240, 3e-3, 4096),
    "b": (14_200_000, 150, 1.5e-3, 2048),
    "l": (38_000_000, 56, 1.5e-3, 2048),
}
PRESET_TRAINING = {
    name: dict(peak_lr=lr, batch_size=bs, warmup_steps=round(n / bs), total_steps=round(n * ep / bs))
    for name, (n, ep, lr, bs) in _PT_SCHEDULE.items()
}
PRESET_TRAINING["toy"] = dict(peak_lr=1e-3, batch_size=32, warmup_steps=25, total_steps=500)


def preset(name: str, **overrides) -> TrVConfig:
    """Model variants Ti/S/B/L plus a desk-scale ``toy`` model."""
    name = name.lower()
    if name == "toy":
        base = dict(depth=2, width=16, num_heads=2, patch_size=2, grid_h=8, grid_w=8,
                    teacher_dim=16, norm_scheme="sub_ln")
    elif name in _TABLE_ROWS:
        base = dict(_TABLE_ROWS[name], patch_size=14, grid_h=16, grid_w=16)
    else:
        raise ConfigError(f"preset: unknown preset {name!r} (expected ti, s, b, l, toy)")
    base.update(overrides)
    return TrVConfig(**base)


ABLATION_ROWS = (
    ("vit_beit_baseline", dict(norm_scheme="pre_ln", init_scheme="beit_style", ffn_type="mlp", pos_embed="abs_pe")),
    ("xnorm_mlp", dict(norm_scheme="pre_ln", init_scheme="xavier_normal", ffn_type="mlp", pos_embed="abs_pe")),
    ("beit_swiglu", dict(norm_scheme="pre_ln", init_scheme="beit_style", ffn_type="swiglu", pos_embed="abs_pe")),
    ("xnorm_swiglu", dict(norm_scheme="pre_ln", init_scheme="xavier_normal", ffn_type="swiglu", pos_embed="abs_pe")),
    ("subln_xnorm_swiglu", dict(norm_scheme="sub_ln", init_scheme="xavier_normal", ffn_type="swiglu", pos_embed="abs_pe")),
    ("trv", dict(norm_scheme="sub_ln", init_scheme="xavier_normal", ffn_type="swiglu", pos_embed="rope2d")),
    ("trv_rel_pe", dict(norm_scheme="sub_ln", init_scheme="xavier_normal", ffn_type="swiglu", pos_embed="rel_pe")),
    ("postln_rope", dict(norm_scheme="post_ln", init_scheme="xavier_normal", ffn_type="swiglu", pos_embed="rope2d")),
)


def ablation_configs(base: TrVConfig) -> dict[str, TrVConfig]:
    """One config per row of the ViT-to-TrV ablation, on top of ``base``'s macro shape."""
    return {name: base.replace(**toggles) for name, toggles in ABLATION_ROWS}

"""Flat ``key = value`` run configuration (JSON objects accepted too)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from ..arch import PRESET_TRAINING, ConfigError, TrVConfig, preset
from ..mim.optim import LrSchedule
from ..mim.teacher import TEACHERS

DEFAULT_PRESET = "toy"

# config key -> TrVConfig field
MODEL_KEYS = {
    "depth": ("depth", int),
    "width": ("width", int),
    "heads": ("num_heads", int),
    "ffn_type": ("ffn_type", str),
    "ffn_hidden": ("ffn_hidden", int),
    "norm_scheme": ("norm_scheme", str),
    "pos_embed": ("pos_embed", str),
    "init_scheme": ("init_scheme", str),
    "drop_path": ("drop_path_rate", float),
    "teacher_dim": ("teacher_dim", int),
    "grid_h": ("grid_h", int),
    "grid_w": ("grid_w", int),
    "patch_size": ("patch_size", int),
}

RUN_KEYS = {
    "mask_ratio": float,
    "peak_lr": float,
    "warmup_steps": int,
    "total_steps": int,
    "floor_lr": float,
    "layer_decay": float,
    "batch_size": int,
    "wd": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "seed": int,
    "teacher": str,
    "locality": float,
    "n_samples": int,
    "ckpt_every": int,
    "out_dir": str,
}

KNOWN_KEYS = ("preset", *MODEL_KEYS, *RUN_KEYS)


@dataclass(frozen=True)
class RunSettings:
    model: TrVConfig = field(default_factory=lambda: preset(DEFAULT_PRESET))
    preset: str = DEFAULT_PRESET
    mask_ratio: float = 0.4
    peak_lr: float = 1e-3
    warmup_steps: int = 25
    total_steps: int = 500
    floor_lr: float = 0.0
    layer_decay: float = 1.0
    batch_size: int = 32
    wd: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    seed: Optional[int] = None
    teacher: str = "student_copy"
    locality: float = 0.1
    n_samples: int = 8
    ckpt_every: int = 100
    out_dir: str = "runs/trvmim"

    def __post_init__(self):
        checks = (
            ("mask_ratio", 0.0 < self.mask_ratio < 1.0, "must lie in (0, 1)"),
            ("peak_lr", self.peak_lr >= 0.0, "must be >= 0"),
            ("floor_lr", 0.0 <= self.floor_lr <= self.peak_lr, "must lie in [0, peak_lr]"),
            ("total_steps", self.total_steps >= 1, "must be >= 1"),
            ("warmup_steps", 0 <= self.warmup_steps <= self.total_steps, "must lie in [0, total_steps]"),
            ("layer_decay", 0.0 < self.layer_decay <= 1.0, "must lie in (0, 1]"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("wd", self.wd >= 0.0, "must be >= 0"),
            ("beta1", 0.0 <= self.beta1 < 1.0, "must lie in [0, 1)"),
            ("beta2", 0.0 <= self.beta2 < 1.0, "must lie in [0, 1)"),
            ("eps", self.eps > 0.0, "must be > 0"),
            ("teacher", self.teacher in TEACHERS, f"expected one of {TEACHERS}"),
            ("locality", self.locality >= 0.0, "must be >= 0"),
            ("n_samples", self.n_samples >= 1, "must be >= 1"),
            ("ckpt_every", self.ckpt_every >= 0, "must be >= 0"),
        )
        for key, ok, why in checks:
            if not ok:
                raise ConfigError(f"{key}: {why}, got {getattr(self, key)!r}")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.peak_lr, self.warmup_steps, self.total_steps, self.floor_lr, self.layer_decay)

    def to_flat(self) -> dict[str, Any]:
        """The inverse of :func:`settings_from_mapping`: a flat key map covering every key."""
        out: dict[str, Any] = {"preset": self.preset}
        for key, (attr, _) in MODEL_KEYS.items():
            out[key] = getattr(self.model, attr)
        for key in RUN_KEYS:
            out[key] = getattr(self, key)
        return out


def _coerce(key: str, value: Any, kind: type):
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected {kind.__name__}, got boolean {value!r}")
    try:
        if kind is int:
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError
                return int(value)
            return int(str(value).strip())
        if kind is float:
            return float(str(value).strip()) if isinstance(value, str) else float(value)
        if not isinstance(value, str):
            raise ValueError
        return value.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def settings_from_mapping(raw: Mapping[str, Any]) -> RunSettings:
    """Validate a flat key map; the preset fills every key the map leaves out."""
    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{key}: unknown config key")
    name = _coerce("preset", raw.get("preset", DEFAULT_PRESET), str).lower()
    model_over = {MODEL_KEYS[k][0]: _coerce(k, v, MODEL_KEYS[k][1]) for k, v in raw.items() if k in MODEL_KEYS}
    if "ffn_hidden" not in model_over:
        model_over.setdefault("ffn_hidden", None)
    base = preset(name)
    try:
        model = base.replace(**model_over)
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from None
    run = dict(PRESET_TRAINING.get(name, {}))
    run.update({k: _coerce(k, v, RUN_KEYS[k]) for k, v in raw.items() if k in RUN_KEYS})
    return RunSettings(model=model, preset=name, **run)


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if key in out:
            raise ConfigError(f"{key}: duplicate key on line {lineno}")
        out[key] = value.strip()
    return out


def parse_config_text(text: str) -> dict[str, Any]:
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"json: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("json: top level must be an object")
        return data
    return parse_flat(text)


def read_config(path) -> dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {p}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config: {p} is not UTF-8 ({exc.reason})") from None
    return parse_config_text(text)


def load_config(path) -> RunSettings:
    return settings_from_mapping(read_config(path))


def dump_flat(settings: RunSettings) -> str:
    lines = [f"{k} = {'' if v is None else v}" for k, v in settings.to_flat().items()]
    return "\n".join(line for line in lines if not line.endswith("= ")) + "\n"


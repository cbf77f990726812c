"""Command-line entry point: ``trvmim <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Optional, Sequence

import numpy as np

from .arch import ConfigError, ablation_configs, count_macs, count_params, preset
from .io.checkpoint import CheckpointError, read_entries
from .io.config_file import KNOWN_KEYS, read_config, settings_from_mapping
from .io.run import run_pretrain
from .mim import TrainingError, blockwise_mask
from .mim.verify import objective_gradcheck
from .numerics import ShapeError

# explicit pretrain flags and the config key each one sets
_PRETRAIN_FLAGS = (
    ("--preset", "preset", str),
    ("--out-dir", "out_dir", str),
    ("--total-steps", "total_steps", int),
    ("--warmup-steps", "warmup_steps", int),
    ("--peak-lr", "peak_lr", float),
    ("--batch-size", "batch_size", int),
    ("--mask-ratio", "mask_ratio", float),
    ("--teacher", "teacher", str),
    ("--ckpt-every", "ckpt_every", int),
)

_MODEL_FLAGS = (
    ("--depth", "depth", int),
    ("--width", "width", int),
    ("--heads", "num_heads", int),
    ("--ffn-type", "ffn_type", str),
    ("--norm-scheme", "norm_scheme", str),
    ("--pos-embed", "pos_embed", str),
    ("--init-scheme", "init_scheme", str),
    ("--teacher-dim", "teacher_dim", int),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _model_args(p: argparse.ArgumentParser, default_preset: str) -> None:
    p.add_argument("--preset", default=default_preset, help="ti, s, b, l or toy")
    for flag, dest, kind in _MODEL_FLAGS:
        p.add_argument(flag, dest=dest, type=kind, default=None)


def _model_from(args, **extra):
    over = {dest: getattr(args, dest) for _, dest, _ in _MODEL_FLAGS if getattr(args, dest) is not None}
    over.update({k: v for k, v in extra.items() if v is not None})
    return preset(args.preset, **over)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trvmim", description="TrV encoder with masked image modeling pre-training.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("pretrain", help="run MIM pre-training on synthetic data")
    p.add_argument("--config", help="key = value or JSON config file")
    p.add_argument("--seed", type=int, required=True)
    for flag, key, kind in _PRETRAIN_FLAGS:
        p.add_argument(flag, dest=key, type=kind, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this many steps without changing the schedule")
    p.add_argument("-q", "--quiet", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full MIM objective")
    _model_args(p, "toy")
    p.add_argument("--grid", type=int, default=4, help="square patch grid side")
    p.add_argument("--drop-path", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--order", type=int, default=4, choices=(2, 4))
    p.add_argument("--step", type=float, default=1e-3, help="finite-difference step h")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--ablation", action="store_true", help="check every ablation row on top of the model")

    p = sub.add_parser("count-params", help="analytic parameter count")
    _model_args(p, "b")
    p.add_argument("--no-head", action="store_true", help="exclude the MIM prediction head")

    p = sub.add_parser("count-macs", help="analytic multiply-accumulate count")
    _model_args(p, "b")
    p.add_argument("--tokens", type=int, default=196)

    p = sub.add_parser("mask-stats", help="sample block-wise masks and summarise them")
    p.add_argument("--grid", type=int, default=14)
    p.add_argument("--grid-w", type=int, default=None, help="grid width when not square")
    p.add_argument("--ratio", type=float, default=0.4)
    p.add_argument("-n", "--num", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect-ckpt", help="list checkpoint entries")
    p.add_argument("path")
    return parser


def _cmd_pretrain(args) -> int:
    raw = dict(read_config(args.config)) if args.config else {}
    for _, key, _ in _PRETRAIN_FLAGS:
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise _UsageError(f"trvmim pretrain: error: --set expects KEY=VALUE, got {item!r}")
        if key.strip() not in KNOWN_KEYS:
            raise ConfigError(f"{key.strip()}: unknown config key")
        raw[key.strip()] = value
    raw["seed"] = args.seed
    settings = settings_from_mapping(raw)
    result = run_pretrain(settings, resume=args.resume, stop_at=args.stop_at)
    print(f"steps={result.step} final_loss={result.final_loss} checkpoint={result.last_checkpoint} "
          f"metrics={result.out_dir / 'metrics.jsonl'}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _model_from(args, grid_h=args.grid, grid_w=args.grid, drop_path_rate=args.drop_path)
    cfgs = ablation_configs(cfg) if args.ablation else {"model": cfg}
    worst = 0.0
    for name, c in cfgs.items():
        r = objective_gradcheck(c, seed=args.seed, batch=args.batch, h=args.step, order=args.order)
        worst = max(worst, r.max_rel_error)
        print(f"{name}: max_rel_err={r.max_rel_error:.3e} worst={r.worst_param} "
              f"coords={r.n_coords} time={r.seconds:.1f}s")
    ok = worst < args.tol
    print(f"max_rel_err={worst:.3e} tol={args.tol:g} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_count_params(args) -> int:
    cfg = _model_from(args)
    n = count_params(cfg, include_head=not args.no_head)
    print(f"{n} ({n / 1e6:.2f}M)")
    return 0


def _cmd_count_macs(args) -> int:
    n = count_macs(_model_from(args), args.tokens)
    print(f"{n} ({n / 1e9:.2f}G)")
    return 0


def _cmd_mask_stats(args) -> int:
    gh, gw = args.grid, args.grid_w or args.grid
    if args.num < 1:
        raise ConfigError(f"num: must be >= 1, got {args.num}")
    rng = np.random.default_rng(args.seed)
    plans = [blockwise_mask(gh, gw, args.ratio, rng) for _ in range(args.num)]
    counts = np.array([p.count for p in plans])
    target = math.ceil(args.ratio * gh * gw - 1e-9)
    min_rect = min(h * w for p in plans for (_, _, h, w) in p.rects)
    frac = counts / (gh * gw)
    print(f"plans={args.num} grid={gh}x{gw} ratio={args.ratio} target_count={target}")
    print(f"count min={counts.min()} max={counts.max()} overshoot_max={counts.max() - target}")
    print(f"fraction mean={frac.mean():.4f} std={frac.std():.4f} min_rect_area={min_rect}")
    return 0


def _cmd_inspect(args) -> int:
    entries = read_entries(args.path)
    for name, arr in entries.items():
        shape = "x".join(map(str, arr.shape)) or "scalar"
        print(f"{name}\t{arr.dtype}\t{shape}")
    step = entries.get("meta/step")
    print(f"entries={len(entries)} step={None if step is None else int(step)}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "gradcheck": _cmd_gradcheck,
    "count-params": _cmd_count_params,
    "count-macs": _cmd_count_macs,
    "mask-stats": _cmd_mask_stats,
    "inspect-ckpt": _cmd_inspect,
}

_RUNTIME_ERRORS = (ConfigError, CheckpointError, ShapeError, TrainingError, OSError, ValueError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "pretrain":
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(asctime)s %(name)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"trvmim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

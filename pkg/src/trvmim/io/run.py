"""The pre-training loop with metrics, periodic checkpoints and exact resume."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..arch import init_params
from ..mim import OptimizerState, make_teacher, pretrain_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config_file import RunSettings
from .metrics import MetricsWriter, truncate_after
from .synth import synth_dataset

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:07d}.trvc"


@dataclass
class RunResult:
    out_dir: Path
    step: int
    last_checkpoint: Optional[Path]
    final_loss: Optional[float]


def step_rng(seed: int, step: int) -> np.random.Generator:
    # keyed by (seed, step) so a resumed run needs no stored generator state
    return np.random.default_rng([seed, step])


def batch_for_step(data, step: int, batch_size: int):
    """Cycles the fixed dataset; a batch larger than it revisits samples under fresh masks."""
    n = len(data)
    return [data[(step * batch_size + i) % n] for i in range(batch_size)]


def run_pretrain(settings: RunSettings, resume: Optional[str] = None, stop_at: Optional[int] = None,
                 out_dir=None) -> RunResult:
    """Train from scratch (or from ``resume``) up to ``stop_at`` or ``total_steps``.

    Metrics go to ``<out_dir>/metrics.jsonl``; checkpoints every ``ckpt_every``
    steps plus one at the final step.
    """
    if settings.seed is None:
        raise ValueError("seed: pre-training requires an explicit seed")
    cfg = settings.model
    seed = settings.seed
    out = Path(out_dir if out_dir is not None else settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    end = settings.total_steps if stop_at is None else min(stop_at, settings.total_steps)

    initial = init_params(cfg, seed)
    teacher = make_teacher(settings.teacher, cfg, seed, student_params=initial, locality=settings.locality)
    data = synth_dataset(seed, settings.n_samples, (cfg.grid_h, cfg.grid_w), cfg.patch_dim)
    schedule = settings.schedule()

    if resume is not None:
        params, opt_state, start = load_checkpoint(resume, cfg)
        metrics_path = out / METRICS_FILE
        if metrics_path.exists():
            truncate_after(metrics_path, start - 1)
        writer = MetricsWriter(metrics_path, append=True)
        log.info("resumed from %s at step %d", resume, start)
    else:
        params = initial
        opt_state = OptimizerState.zeros_like(params, beta1=settings.beta1, beta2=settings.beta2,
                                              eps=settings.eps, weight_decay=settings.wd)
        start = 0
        writer = MetricsWriter(out / METRICS_FILE)

    last_ckpt = None
    loss = None
    with writer:
        for step in range(start, end):
            t0 = time.perf_counter()
            batch = batch_for_step(data, step, settings.batch_size)
            metrics, params, opt_state = pretrain_step(cfg, params, batch, teacher, opt_state, schedule,
                                                       step, step_rng(seed, step), settings.mask_ratio)
            metrics["wall_ms"] = (time.perf_counter() - t0) * 1e3
            writer.write(metrics)
            loss = metrics["loss"]
            done = step + 1
            if done == end or (settings.ckpt_every and done % settings.ckpt_every == 0):
                last_ckpt = out / checkpoint_name(done)
                save_checkpoint(params, opt_state, done, last_ckpt, cfg)
            if step % 50 == 0:
                log.info("step %d loss %.5f lr %.3g", step, loss, metrics["lr"])
    return RunResult(out, end, last_ckpt, loss)

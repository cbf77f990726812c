"""JSON Lines metrics stream."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

FIELDS = ("step", "loss", "lr", "masked_fraction", "wall_ms")


class MetricsWriter:
    """Appends one record per line and flushes after each, so a killed run keeps its prefix."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8", newline="\n")
        self._last_step = None

    def write(self, record: dict) -> None:
        missing = [k for k in FIELDS if k not in record]
        if missing:
            raise ValueError(f"metrics record lacks {missing}")
        step = int(record["step"])
        if self._last_step is not None and step <= self._last_step:
            raise ValueError(f"metrics step {step} does not follow {self._last_step}")
        self._last_step = step
        self._fh.write(json.dumps({k: record[k] for k in FIELDS}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    return list(iter_metrics(path))


def iter_metrics(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def truncate_after(path, step: int) -> None:
    """Drop records past ``step``, e.g. before resuming from an earlier checkpoint."""
    keep = [r for r in iter_metrics(path) if r["step"] <= step]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in keep:
            fh.write(json.dumps(r) + "\n")


def without_wall(records) -> list[dict]:
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in records]

"""Frozen teachers that supply per-patch regression targets."""
from __future__ import annotations

from typing import Mapping, Protocol

import numpy as np

from ..arch import TrVConfig, encoder_forward, init_params
from ..arch.layers import linear
from ..numerics import Tensor
from .objective import mim_head


class TeacherOracle(Protocol):
    feature_dim: int

    def features(self, sample) -> np.ndarray:
        """[tokens, feature_dim] targets for ``sample``; identical on every call."""
        ...


class _Cached:
    feature_dim: int

    def __init__(self):
        self._cache: dict[int, np.ndarray] = {}

    def features(self, sample) -> np.ndarray:
        hit = self._cache.get(sample.sample_id)
        if hit is None:
            hit = self._compute(np.asarray(sample.patches, dtype=np.float64))
            hit.flags.writeable = False
            self._cache[sample.sample_id] = hit
        return hit

    def _compute(self, patches: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class StudentCopyTeacher(_Cached):
    """An untrained TrV with the student's architecture, run on uncorrupted patches.

    ``locality`` scales each token's deviation from the image-mean feature:
    1.0 returns the raw per-token head outputs, 0.0 gives every token the
    image-level mean.
    """

    def __init__(self, cfg: TrVConfig, params: Mapping[str, np.ndarray], locality: float = 1.0):
        super().__init__()
        self.cfg = cfg.replace(drop_path_rate=0.0)
        self.params = {k: Tensor(v) for k, v in params.items()}
        self.feature_dim = cfg.teacher_dim
        self.locality = float(locality)

    @classmethod
    def from_seed(cls, cfg: TrVConfig, seed: int, locality: float = 1.0) -> "StudentCopyTeacher":
        return cls(cfg, init_params(cfg, seed), locality)

    def _compute(self, patches):
        p = self.params
        tokens = linear(patches, p["patch_embed.weight"], p["patch_embed.bias"])
        feats = encoder_forward(self.cfg, p, tokens)
        out = mim_head(feats, p["head.norm.weight"], p["head.norm.bias"], p["head.proj.weight"], self.cfg.ln_eps)
        f = np.array(out.data)
        g = f.mean(axis=0, keepdims=True)
        return g + self.locality * (f - g)


class RandomProjectionTeacher(_Cached):
    """tanh of a fixed Gaussian projection of each patch, plus a shared per-image term."""

    def __init__(self, patch_dim: int, feature_dim: int, seed: int):
        super().__init__()
        rng = np.random.default_rng([seed, 0x7EAC])
        self.local = rng.standard_normal((patch_dim, feature_dim)) / np.sqrt(patch_dim)
        self.glob = rng.standard_normal((patch_dim, feature_dim)) / np.sqrt(patch_dim) * 4.0
        self.feature_dim = feature_dim

    def _compute(self, patches):
        ctx = patches.mean(axis=0, keepdims=True) @ self.glob
        return np.tanh(patches @ self.local + ctx)


TEACHERS = ("student_copy", "random_projection")


def make_teacher(kind: str, cfg: TrVConfig, seed: int, student_params=None,
                 locality: float = 1.0) -> TeacherOracle:
    if kind == "student_copy":
        if student_params is None:
            return StudentCopyTeacher.from_seed(cfg, seed, locality)
        return StudentCopyTeacher(cfg, student_params, locality)
    if kind == "random_projection":
        return RandomProjectionTeacher(cfg.patch_dim, cfg.teacher_dim, seed)
    raise ValueError(f"teacher: unknown teacher {kind!r} (expected one of {TEACHERS})")

"""Streaming per-class mean estimation and the vMF parameter fit.

The estimator keeps two buffers. ``committed`` holds the per-class means
of the last completed epoch and is what the loss reads; ``accumulating``
collects the current epoch from zero. ``commit_epoch`` swaps them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .vmf import ClassMixture

DEFAULT_R_MAX = 1.0 - 1e-6
FEATURE_TOL = 1e-6


def kappa_from_resultant(r_bar, p: int):
    """Closed-form concentration estimate ``R (p - R^2) / (1 - R^2)``."""
    r = np.asarray(r_bar, dtype=float)
    out = r * (p - r * r) / (1.0 - r * r)
    return float(out) if out.ndim == 0 else out


@dataclass
class OnlineMoments:
    """Running counts (K,) and means (K, p) for each class."""

    counts: np.ndarray
    means: np.ndarray

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "OnlineMoments":
        return cls(np.zeros(n_classes, dtype=np.int64), np.zeros((n_classes, dim)))

    def merge(self, counts: np.ndarray, means: np.ndarray) -> None:
        """Fold in per-class batch statistics with the weighted-mean rule."""
        total = self.counts + counts
        seen = total > 0
        w_old = np.where(seen, self.counts / np.maximum(total, 1), 0.0)
        w_new = np.where(seen, counts / np.maximum(total, 1), 0.0)
        self.means = w_old[:, None] * self.means + w_new[:, None] * means
        self.counts = total

    def copy(self) -> "OnlineMoments":
        return OnlineMoments(self.counts.copy(), self.means.copy())


class EpochEstimator:
    """Two-buffer estimator of per-class vMF parameters.

    Not thread-safe for writers: ``update`` and ``commit_epoch`` mutate in
    place. ``estimate_params`` only reads the committed buffer.
    """

    def __init__(self, n_classes: int, dim: int, r_max: float = DEFAULT_R_MAX):
        if not 0.0 < r_max < 1.0:
            raise ValueError("r_max must lie in (0, 1)")
        if dim % 2:
            raise ValueError("dimension must be even")
        self.n_classes = n_classes
        self.dim = dim
        self.r_max = r_max
        self.committed = OnlineMoments.zeros(n_classes, dim)
        self.accumulating = OnlineMoments.zeros(n_classes, dim)

    def update(self, z, labels) -> None:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        labels = np.asarray(labels).reshape(-1)
        if z.shape != (labels.shape[0], self.dim):
            raise ValueError(f"expected features of shape ({labels.shape[0]}, {self.dim}), got {z.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("label out of range")
        if labels.dtype.kind not in "iu":
            raise ValueError("labels must be integers")
        if np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > FEATURE_TOL):
            raise ValueError("features must be unit-norm")
        counts = np.bincount(labels, minlength=self.n_classes)
        sums = np.zeros((self.n_classes, self.dim))
        np.add.at(sums, labels, z)
        means = sums / np.maximum(counts, 1)[:, None]
        self.accumulating.merge(counts, means)

    def commit_epoch(self) -> None:
        self.committed = self.accumulating
        self.accumulating = OnlineMoments.zeros(self.n_classes, self.dim)

    def estimate_params(self, priors) -> ClassMixture:
        """Fit a ClassMixture from the committed buffer.

        Classes never seen in the committed epoch get ``kappa = 0`` (uniform)
        and the first basis vector as a placeholder mean direction.
        """
        priors = np.asarray(priors, dtype=float)
        if priors.shape != (self.n_classes,):
            raise ValueError("one prior per class required")
        means = self.committed.means
        norms = np.linalg.norm(means, axis=1)
        seen = (self.committed.counts > 0) & (norms > 0)
        r_bar = np.minimum(norms, self.r_max)
        kappas = np.where(seen, kappa_from_resultant(r_bar, self.dim), 0.0)
        mus = np.zeros_like(means)
        mus[:, 0] = 1.0
        mus[seen] = means[seen] / norms[seen, None]
        return ClassMixture(priors=priors, mus=mus, kappas=kappas)

    # --- checkpointing -----------------------------------------------------

    def to_dict(self) -> dict:
        def buf(m: OnlineMoments) -> dict:
            return {"counts": m.counts.tolist(), "means": m.means.tolist()}

        return {
            "n_classes": self.n_classes,
            "dim": self.dim,
            "r_max": self.r_max,
            "committed": buf(self.committed),
            "accumulating": buf(self.accumulating),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpochEstimator":
        est = cls(int(data["n_classes"]), int(data["dim"]), float(data["r_max"]))
        for name in ("committed", "accumulating"):
            buf = data[name]
            counts = np.asarray(buf["counts"], dtype=np.int64)
            means = np.asarray(buf["means"], dtype=float).reshape(est.n_classes, est.dim)
            setattr(est, name, OnlineMoments(counts, means))
        return est

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EpochEstimator":
        return cls.from_dict(json.loads(text))

    def committed_digest(self) -> str:
        """Stable hash of the committed buffer, for checking it stays frozen."""
        h = hashlib.sha256()
        h.update(self.committed.counts.tobytes())
        h.update(self.committed.means.tobytes())
        return h.hexdigest()

"""von Mises-Fisher distribution on the unit sphere S^{p-1}."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .special_fn import log_vmf_normalizer, mean_resultant

UNIT_TOL = 1e-9


def _unit(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must have unit norm, got {np.linalg.norm(v)!r}")
    return v


@dataclass(frozen=True)
class VmfParams:
    """Mean direction ``mu`` and concentration ``kappa`` of one vMF component."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", _unit(self.mu, "mu"))
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa!r}")
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class ClassMixture:
    """Per-class priors and vMF parameters, stored as stacked arrays.

    ``mus`` has shape (K, p); ``priors`` and ``kappas`` have shape (K,).
    """

    priors: np.ndarray
    mus: np.ndarray
    kappas: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        mus = np.atleast_2d(np.asarray(self.mus, dtype=float))
        kappas = np.asarray(self.kappas, dtype=float).reshape(-1)
        k = priors.shape[0]
        if mus.shape[0] != k or kappas.shape[0] != k:
            raise ValueError("priors, mus and kappas must agree on the class count")
        if np.any(priors <= 0) or np.any(priors > 1) or abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must lie in (0, 1] and sum to 1")
        if np.any(np.abs(np.linalg.norm(mus, axis=1) - 1.0) > UNIT_TOL):
            raise ValueError("every mean direction must have unit norm")
        if np.any(kappas < 0):
            raise ValueError("kappas must be non-negative")
        p = mus.shape[1]
        if p % 2:
            raise ValueError("feature dimension must be even")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "dim", p)

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, VmfParams]]) -> "ClassMixture":
        dims = {params.dim for _, params in components}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        return cls(
            priors=np.array([pi for pi, _ in components]),
            mus=np.stack([params.mu for _, params in components]),
            kappas=np.array([params.kappa for _, params in components]),
        )

    @property
    def n_classes(self) -> int:
        return self.priors.shape[0]

    def component(self, j: int) -> VmfParams:
        return VmfParams(self.mus[j], self.kappas[j])


def log_density(params: VmfParams, z) -> float | np.ndarray:
    """``kappa * mu.z - log C_p(kappa)`` for one point or a (n, p) array."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.dim:
        raise ValueError(f"dimension mismatch: {z.shape[-1]} vs {params.dim}")
    out = params.kappa * (z @ params.mu) - log_vmf_normalizer(params.dim, params.kappa)
    return float(out) if np.ndim(out) == 0 else out


def expectation(params: VmfParams) -> np.ndarray:
    return mean_resultant(params.dim, params.kappa) * params.mu


def log_mgf_ratio(params: VmfParams, t) -> float | np.ndarray:
    """``log E[exp(t.z)] = log C_p(||kappa mu + t||) - log C_p(kappa)``.

    ``t`` may be a single p-vector or an (n, p) array.
    """
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != params.dim:
        raise ValueError(f"dimension mismatch: {t.shape[-1]} vs {params.dim}")
    kappa_tilde = np.linalg.norm(params.kappa * params.mu + t, axis=-1)
    p = params.dim
    out = log_vmf_normalizer(p, kappa_tilde) - log_vmf_normalizer(p, params.kappa)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling


def sample_uniform_sphere(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    g = rng.standard_normal((n, p))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sample_cosines(rng: np.random.Generator, kappa: float, p: int, n: int) -> np.ndarray:
    """Wood (1994) rejection sampler for w = mu.z."""
    d = p - 1
    # b = (-2k + sqrt(4k^2 + d^2)) / d, written without cancellation
    b = d / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + d * d))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * math.log(1.0 - x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(n - filled, 16)
        beta = rng.beta(0.5 * d, 0.5 * d, size=m)
        w = (1.0 - (1.0 + b) * beta) / (1.0 - (1.0 - b) * beta)
        u = rng.uniform(size=m)
        ok = kappa * w + d * np.log1p(-x0 * w) - c >= np.log(u)
        acc = w[ok][: n - filled]
        out[filled : filled + acc.shape[0]] = acc
        filled += acc.shape[0]
    return out


def sample(params: VmfParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` exact vMF variates, shape (n, p).

    The cosine ``w`` with the mean direction is drawn first, then a uniform
    tangent direction, so for a fixed seed the ``w`` stream does not depend
    on ``mu``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    p = params.dim
    if params.kappa == 0:
        return sample_uniform_sphere(rng, n, p)
    w = _sample_cosines(rng, params.kappa, p, n)
    g = rng.standard_normal((n, p))
    mu = params.mu
    v = g - np.outer(g @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    z = w[:, None] * mu + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_mixture(mix: ClassMixture, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """I.i.d. draws from the mixture; returns ``(z, labels)``."""
    labels = rng.choice(mix.n_classes, size=n, p=mix.priors)
    z = np.empty((n, mix.dim))
    for j in range(mix.n_classes):
        idx = np.flatnonzero(labels == j)
        if idx.size:
            z[idx] = sample(mix.component(j), rng, idx.size)
    return z, labels


def random_unit(rng: np.random.Generator, p: int) -> np.ndarray:
    return sample_uniform_sphere(rng, 1, p)[0]

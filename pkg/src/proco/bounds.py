"""Binary-class error analysis: the generalization bound, a resampling check
of its violation rate, the excess-risk scaling experiment and the logistic
versus linear variance comparison.

Class index 0 stands for label -1 and index 1 for label +1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .estimation import EpochEstimator
from .loss import proco_loss
from .vmf import ClassMixture, VmfParams, sample

SIGNS = np.array([-1.0, 1.0])


@dataclass
class BinaryBoundInputs:
    """Estimated two-class mixture plus the per-class samples it is scored on."""

    mix: ClassMixture
    samples: tuple[np.ndarray, np.ndarray]
    delta: float
    tau: float

    def __post_init__(self):
        if self.mix.n_classes != 2:
            raise ValueError("binary mixture required")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if any(np.atleast_2d(s).shape[0] == 0 for s in self.samples):
            raise ValueError("both classes need at least one sample")

    @property
    def w(self) -> np.ndarray:
        return (self.mix.mus[1] - self.mix.mus[0]) / self.tau

    @property
    def b(self) -> float:
        k_neg, k_pos = self.mix.kappas
        pi_neg, pi_pos = self.mix.priors
        return (1.0 / k_pos - 1.0 / k_neg) / (2.0 * self.tau**2) + math.log(pi_pos / pi_neg)


@dataclass
class ClassBoundTerms:
    n: int
    empirical_loss: float
    variance_term: float
    range_term: float

    @property
    def bound(self) -> float:
        return self.empirical_loss + self.variance_term + self.range_term


@dataclass
class BoundResult:
    per_class: list[ClassBoundTerms]
    total: float


def generalization_bound(inputs: BinaryBoundInputs) -> BoundResult:
    """Empirical loss plus variance and range terms, weighted by class priors."""
    w, b = inputs.w, inputs.b
    log_term = math.log(2.0 / inputs.delta)
    w_norm = float(np.linalg.norm(w))
    per_class = []
    for idx, (z, sign) in enumerate(zip(inputs.samples, SIGNS)):
        z = np.atleast_2d(z)
        n = z.shape[0]
        emp = float(np.mean(proco_loss(z, np.full(n, idx), inputs.mix, inputs.tau, with_grad=False).value))
        # sample covariance; a single sample gives zero spread
        centred = z - z.mean(axis=0)
        spread = float(np.sum((centred @ w) ** 2) / max(n - 1, 1))
        variance = math.sqrt(2.0 / n * spread * log_term)
        rng_term = log_term / (3.0 * n) * float(np.logaddexp(0.0, w_norm - b * sign))
        per_class.append(ClassBoundTerms(n, emp, variance, rng_term))
    total = float(sum(pi * t.bound for pi, t in zip(inputs.mix.priors, per_class)))
    return BoundResult(per_class, total)


def expected_loss(mix: ClassMixture, heldout: tuple[np.ndarray, np.ndarray], priors, tau: float) -> float:
    """Prior-weighted average loss over per-class held-out draws."""
    total = 0.0
    for idx, z in enumerate(heldout):
        total += priors[idx] * float(np.mean(proco_loss(z, np.full(len(z), idx), mix, tau, with_grad=False).value))
    return total


def fit_mixture(samples: tuple[np.ndarray, np.ndarray], priors) -> ClassMixture:
    dim = samples[0].shape[1]
    est = EpochEstimator(2, dim)
    for idx, z in enumerate(samples):
        est.update(z, np.full(len(z), idx))
    est.commit_epoch()
    return est.estimate_params(priors)


# ---------------------------------------------------------------------------
# resampling check of the bound


@dataclass
class ViolationReport:
    trials: int
    delta: float
    n_per_class: int
    violations: int
    allowed: float
    true_losses: list[float] = field(default_factory=list)
    bounds: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations <= self.allowed

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        out["gaps"] = [b - t for t, b in zip(self.true_losses, self.bounds)]
        return out


def binomial_allowance(trials: int, delta: float, z: float = 1.96) -> float:
    """Expected violations plus a one-sided 95% normal-approximation slack."""
    return trials * delta + z * math.sqrt(trials * delta * (1.0 - delta))


def bound_violation_study(
    true_mix: ClassMixture,
    rng: np.random.Generator,
    trials: int = 200,
    n_per_class: int = 200,
    delta: float = 0.1,
    tau: float = 0.1,
    heldout_per_class: int = 100_000,
) -> ViolationReport:
    """Resample datasets, fit parameters, and count how often the held-out
    expected loss exceeds the bound computed from the training draw."""
    if true_mix.n_classes != 2:
        raise ValueError("binary mixture required")
    heldout = tuple(sample(true_mix.component(j), rng, heldout_per_class) for j in range(2))
    report = ViolationReport(trials, delta, n_per_class, 0, binomial_allowance(trials, delta))
    for _ in range(trials):
        train = tuple(sample(true_mix.component(j), rng, n_per_class) for j in range(2))
        mix_hat = fit_mixture(train, true_mix.priors)
        bound = generalization_bound(BinaryBoundInputs(mix_hat, train, delta, tau)).total
        truth = expected_loss(mix_hat, heldout, true_mix.priors, tau)
        report.true_losses.append(truth)
        report.bounds.append(bound)
        report.violations += int(truth > bound)
    return report


# ---------------------------------------------------------------------------
# excess risk under parameter perturbation


@dataclass
class ScalingResult:
    eps: list[float]
    gaps: list[float]
    stderr: list[float]
    slope: float
    excluded: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _tangent(rng: np.random.Generator, mu: np.ndarray) -> np.ndarray:
    g = rng.standard_normal(mu.shape[0])
    g -= (g @ mu) * mu
    return g / np.linalg.norm(g)


def perturb_mixture(mix: ClassMixture, directions: np.ndarray, eps: float) -> ClassMixture:
    """Move each mean by ``eps`` along its tangent direction (then renormalize)
    and scale every ``1/kappa`` by ``1 + eps``.

    The concentration shift is relative so that kappa stays in the large
    concentration regime for every ``eps`` up to 0.1.
    """
    mus = mix.mus + eps * directions
    mus /= np.linalg.norm(mus, axis=1, keepdims=True)
    kappas = mix.kappas / (1.0 + eps)
    return ClassMixture(mix.priors, mus, kappas)


def excess_risk_scaling(
    true_mix: ClassMixture,
    eps_values,
    rng: np.random.Generator,
    eval_per_class: int = 100_000,
    tau: float = 0.1,
    noise_floor: float = 3.0,
) -> ScalingResult:
    """Fit the log-log slope of the excess expected loss against ``eps``.

    All perturbation sizes share one evaluation sample and one set of
    tangent directions, so the differences are paired. The estimated
    parameters need not be worse than the true ones (the loss is not
    calibrated), so the fit uses ``|gap|``; gaps within ``noise_floor``
    standard errors of zero are left out and listed in ``excluded``.
    """
    if true_mix.n_classes != 2:
        raise ValueError("binary mixture required")
    if np.any(true_mix.kappas <= 0):
        raise ValueError("true concentrations must be positive")
    directions = np.stack([_tangent(rng, mu) for mu in true_mix.mus])
    heldout = [sample(true_mix.component(j), rng, eval_per_class) for j in range(2)]

    def per_sample(mix: ClassMixture) -> list[np.ndarray]:
        return [proco_loss(z, np.full(len(z), j), mix, tau, with_grad=False).value for j, z in enumerate(heldout)]

    base = per_sample(true_mix)
    eps_out, gaps, errs, excluded = [], [], [], []
    for eps in eps_values:
        eps = float(eps)
        if eps == 0:
            gap, err = 0.0, 0.0
        else:
            diff = [a - b for a, b in zip(per_sample(perturb_mixture(true_mix, directions, eps)), base)]
            gap = float(sum(pi * d.mean() for pi, d in zip(true_mix.priors, diff)))
            err = float(math.sqrt(sum(pi**2 * d.var(ddof=1) / d.size for pi, d in zip(true_mix.priors, diff))))
        eps_out.append(eps)
        gaps.append(gap)
        errs.append(err)
        if eps > 0 and abs(gap) <= noise_floor * err:
            excluded.append(eps)
    usable = [(e, abs(g)) for e, g in zip(eps_out, gaps) if e > 0 and e not in excluded]
    if len(usable) >= 2:
        slope = float(stats.linregress(np.log([e for e, _ in usable]), np.log([g for _, g in usable])).slope)
    else:
        slope = float("nan")
    return ScalingResult(eps_out, gaps, errs, slope, excluded)


# ---------------------------------------------------------------------------
# logistic vs linear loss variance


@dataclass
class VarianceCheck:
    var_log: float
    var_lin: float
    stderr: float

    @property
    def holds(self) -> bool:
        return self.var_log <= self.var_lin + 3.0 * self.stderr


def variance_inequality_check(
    params: VmfParams, w: np.ndarray, b: float, sign: float, rng: np.random.Generator, n: int = 100_000
) -> VarianceCheck:
    """Compare variances of ``log(1 + exp(-y s))`` and ``-y s`` with
    ``s = w.z + b`` for z drawn from one class."""
    z = sample(params, rng, n)
    s = z @ w + b
    log_loss = np.logaddexp(0.0, -sign * s)
    lin_loss = -sign * s
    # stderr of the variance difference via its per-sample contributions
    d = (log_loss - log_loss.mean()) ** 2 - (lin_loss - lin_loss.mean()) ** 2
    return VarianceCheck(float(log_loss.var(ddof=1)), float(lin_loss.var(ddof=1)), float(d.std(ddof=1) / math.sqrt(n)))

"""Self-contained numerical checks run by ``proco verify``.

Each suite returns a :class:`SuiteResult` with the measured quantities, the
tolerance it was judged against and the configuration it ran with. Suites
are deterministic for a given seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import special_fn as sf
from .bounds import BinaryBoundInputs, bound_violation_study, excess_risk_scaling, variance_inequality_check
from .harness import ToyModel, finite_difference_check
from .loss import ProcoConfig, proco_asymptotic, proco_loss, supcon_empirical
from .vmf import ClassMixture, VmfParams, log_mgf_ratio, random_unit, sample, sample_uniform_sphere


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metrics: dict
    config: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items() if not isinstance(v, (list, dict)))
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {shown}"


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _basis(p: int, i: int) -> np.ndarray:
    e = np.zeros(p)
    e[i] = 1.0
    return e


def two_class_means(p: int, angle_deg: float) -> np.ndarray:
    """Means ``e1`` and ``cos(a) e1 + sin(a) e2``."""
    a = math.radians(angle_deg)
    return np.stack([_basis(p, 0), math.cos(a) * _basis(p, 0) + math.sin(a) * _basis(p, 1)])


# ---------------------------------------------------------------------------
# Bessel functions


def series_oracle(nu: int, kappa: np.ndarray, terms: int = 200) -> np.ndarray:
    """``log I_nu`` from the power series, summed in log space.

    The ``j = 0`` term is split off and the rest enters through ``log1p`` so
    the result keeps full relative accuracy as ``kappa -> 0``.
    """
    kappa = np.asarray(kappa, dtype=float)
    j = np.arange(1, terms)[:, None]
    log_half = np.log(kappa / 2.0)
    rel = 2.0 * j * log_half - gammaln(j + 1) - gammaln(nu + j + 1) + gammaln(nu + 1)
    return nu * log_half - gammaln(nu + 1) + np.log1p(np.exp(logsumexp(rel, axis=0)))


def bessel_suite(seed: int = 0, samples: int | None = None) -> SuiteResult:
    """Miller recurrence against the power-series oracle on nu <= 64,
    kappa in [1e-3, 50], plus agreement of neighbouring regimes at their
    switch points."""
    t0 = time.perf_counter()
    kappas = np.logspace(-3, math.log10(50.0), 400)
    worst = 0.0
    for nu in range(65):
        got = sf.log_bessel_i_regime(nu, kappas, "miller")
        ref = series_oracle(nu, kappas)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    grid_seconds = time.perf_counter() - t0
    cont = 0.0
    for nu in range(0, 1025, 32):
        k_series = max(sf.SERIES_FLOOR, nu / 2.0)
        a = sf.log_bessel_i_regime(nu, k_series, "series")
        b = sf.log_bessel_i_regime(nu, k_series, "miller")
        cont = max(cont, abs(a - b) / abs(b))
        k_asym = max(sf.ASYMPTOTIC_KAPPA, sf.ASYMPTOTIC_RATIO * nu, float(nu * nu))
        a = sf.log_bessel_i_regime(nu, k_asym, "miller")
        b = sf.log_bessel_i_regime(nu, k_asym, "hankel")
        cont = max(cont, abs(a - b) / abs(b))
    metrics = {"max_rel_err": worst, "max_switch_rel_err": cont, "grid_seconds": grid_seconds}
    passed = worst <= 1e-10 and cont <= 1e-8 and grid_seconds < 5.0
    return SuiteResult("bessel", passed, metrics, {"tol": 1e-10, "switch_tol": 1e-8}, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# moment generating function

MGF_CASES = [(p, k, t) for p in (4, 16, 64) for k, t in ((0.0, 1.0), (5.0, 0.5), (20.0, 2.0), (100.0, 3.0))]


def mgf_suite(seed: int = 0, samples: int = 100_000) -> SuiteResult:
    """Monte Carlo mean of ``exp(t.z)`` against the closed form, within 3 SE."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rows = []
    for p, kappa, t_norm in MGF_CASES:
        params = VmfParams(random_unit(rng, p), kappa)
        t = t_norm * random_unit(rng, p)
        vals = np.exp(sample(params, rng, samples) @ t)
        exact = math.exp(log_mgf_ratio(params, t))
        se = float(vals.std(ddof=1) / math.sqrt(samples))
        rows.append({"p": p, "kappa": kappa, "t_norm": t_norm, "exact": exact, "mc": float(vals.mean()), "z": (vals.mean() - exact) / se})
    worst = max(abs(r["z"]) for r in rows)
    return SuiteResult("mgf", worst <= 3.0, {"max_abs_z": worst, "cases": rows}, {"samples": samples}, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# large-batch limit of the empirical contrastive losses

PROP1_PRIORS = (0.5, 0.3, 0.2)
PROP1_KAPPAS = (40.0, 80.0, 160.0)


def _stratified(mix: ClassMixture, rng: np.random.Generator, n: int):
    counts = np.round(mix.priors * n).astype(int)
    z = np.concatenate([sample(mix.component(j), rng, c) for j, c in enumerate(counts)])
    return z, np.repeat(np.arange(mix.n_classes), counts)


def prop1_suite(seed: int = 0, samples: int = 100_000, replicates: int = 6, tau: float = 0.1) -> SuiteResult:
    """Empirical SupCon losses minus ``log N`` against the closed form.

    Batches hold ``round(pi_j N)`` draws of class j. The gap at each N is
    the root mean square over ``replicates`` independent batches.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    p = 16
    mix = ClassMixture(np.array(PROP1_PRIORS), sample_uniform_sphere(rng, 3, p), np.array(PROP1_KAPPAS))
    y = 0
    anchor = sample(mix.component(y), rng, 1)[0]
    ref = {
        "out": proco_loss(anchor, y, mix, tau, "out", with_grad=False).value,
        "in": proco_loss(anchor, y, mix, tau, "in", with_grad=False).value + math.log(mix.priors[y]),
    }
    sizes = [max(samples // 100, 10), max(samples // 10, 10), samples]
    gaps = {"out": [], "in": []}
    for n in sizes:
        sq = {"out": [], "in": []}
        for _ in range(replicates):
            z, labels = _stratified(mix, rng, n)
            for variant in sq:
                emp = supcon_empirical(anchor, z, labels, y, tau, variant) - math.log(len(labels))
                sq[variant].append((emp - ref[variant]) ** 2)
        for variant in gaps:
            gaps[variant].append(math.sqrt(float(np.mean(sq[variant]))))
    passed = all(g[-1] <= 0.01 and g[-1] < g[0] for g in gaps.values())
    metrics = {"gap_out": gaps["out"][-1], "gap_in": gaps["in"][-1], "sizes": sizes, "gaps": gaps}
    config = {"p": p, "priors": PROP1_PRIORS, "kappas": PROP1_KAPPAS, "tau": tau, "anchor_class": y, "replicates": replicates}
    return SuiteResult("prop1", passed, metrics, config, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# gradients


def random_mixture(rng: np.random.Generator, p: int, k: int, zero_frac: float = 0.1) -> ClassMixture:
    """Log-uniform concentrations in [0.5, 1000], some set to zero (not all)."""
    kappas = np.exp(rng.uniform(math.log(0.5), math.log(1e3), k))
    zero = rng.uniform(size=k) < zero_frac
    zero[rng.integers(k)] = False
    kappas[zero] = 0.0
    return ClassMixture(rng.dirichlet(np.ones(k)), sample_uniform_sphere(rng, k, p), kappas)


def loss_fd_error(z, y, mix: ClassMixture, tau: float, variant: str, h: float = 1e-5) -> float:
    """``||fd - g|| / ||g||`` for the loss gradient in ``z`` (central differences)."""
    p = z.shape[0]
    g = proco_loss(z, y, mix, tau, variant).grad_z
    step = h * np.eye(p)
    vals = proco_loss(np.vstack([z + step, z - step]), np.full(2 * p, y), mix, tau, variant, with_grad=False).value
    fd = (vals[:p] - vals[p:]) / (2.0 * h)
    return float(np.linalg.norm(fd - g) / np.linalg.norm(g))


def grad_suite(seed: int = 0, samples: int | None = None, configs: int = 100, tau: float = 0.1) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(configs):
        p, k = (8, 64, 128)[i % 3], (2, 10)[i % 2]
        mix = random_mixture(rng, p, k)
        z, y = random_unit(rng, p), int(rng.integers(k))
        for variant in ("in", "out"):
            worst = max(worst, loss_fd_error(z, y, mix, tau, variant))
    e2e = 0.0
    for projection in (False, True):
        model = ToyModel.init(rng, 8, 6, 4, 3, projection)
        x = sample_uniform_sphere(rng, 5, 8)
        mix = random_mixture(rng, 4, 3)
        e2e = max(e2e, finite_difference_check(model, x, rng.integers(0, 3, 5), mix, mix.priors, ProcoConfig(tau=0.5, p=4)))
    metrics = {"max_rel_err": worst, "end_to_end_rel_err": e2e}
    return SuiteResult("grad", worst <= 1e-6 and e2e <= 1e-5, metrics, {"configs": configs, "tau": tau}, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# large-concentration expansion


def lemma1_suite(seed: int = 0, samples: int | None = None, anchors: int = 100) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    p, k, tau = 128, 10, 0.1
    mix = ClassMixture(np.full(k, 1.0 / k), sample_uniform_sphere(rng, k, p), rng.uniform(1e4, 2e4, k))
    z = sample_uniform_sphere(rng, anchors, p)
    y = rng.integers(0, k, anchors)
    exact = proco_loss(z, y, mix, tau, "in", with_grad=False).value
    approx = proco_asymptotic(z, y, mix, tau)
    worst = float(np.max(np.abs(exact - approx) / np.abs(exact)))
    config = {"p": p, "classes": k, "tau": tau, "kappa_range": [1e4, 2e4], "anchors": anchors}
    return SuiteResult("lemma1", worst <= 0.01, {"max_rel_gap": worst}, config, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# binary-class checks


def lemma3_suite(seed: int = 0, samples: int = 100_000, configs: int = 10, tau: float = 0.1) -> SuiteResult:
    """Logistic loss variance never exceeds the linear one by more than 3 SE,
    on random binary configurations (both classes checked)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(configs):
        p = int(rng.choice([8, 16, 64]))
        mix = ClassMixture(rng.dirichlet([2.0, 2.0]), sample_uniform_sphere(rng, 2, p), rng.uniform(5.0, 500.0, 2))
        bi = BinaryBoundInputs(mix, (np.zeros((1, p)), np.zeros((1, p))), 0.1, tau)
        for j, sign in enumerate((-1.0, 1.0)):
            chk = variance_inequality_check(mix.component(j), bi.w, bi.b, sign, rng, samples)
            rows.append({"p": p, "class": j, "var_log": chk.var_log, "var_lin": chk.var_lin, "stderr": chk.stderr, "holds": chk.holds})
    margin = min((r["var_lin"] + 3 * r["stderr"] - r["var_log"]) for r in rows)
    passed = all(r["holds"] for r in rows)
    return SuiteResult("lemma3", passed, {"min_margin": margin, "cases": rows}, {"configs": configs, "samples": samples}, time.perf_counter() - t0)


PROP2_CONFIG = {"p": 32, "angle_deg": 60.0, "priors": (0.6, 0.4), "kappas": (50.0, 75.0)}


def prop2_suite(seed: int = 0, samples: int = 20_000, trials: int = 200, delta: float = 0.1, tau: float = 0.1) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    c = PROP2_CONFIG
    mix = ClassMixture(np.array(c["priors"]), two_class_means(c["p"], c["angle_deg"]), np.array(c["kappas"]))
    rep = bound_violation_study(mix, rng, trials=trials, n_per_class=200, delta=delta, tau=tau, heldout_per_class=samples)
    gaps = np.array(rep.bounds) - np.array(rep.true_losses)
    metrics = {"violations": rep.violations, "allowed": rep.allowed, "min_gap": float(gaps.min()), "mean_gap": float(gaps.mean())}
    config = {**c, "trials": trials, "n_per_class": 200, "delta": delta, "tau": tau, "heldout_per_class": samples}
    return SuiteResult("prop2", rep.passed, metrics, config, time.perf_counter() - t0)


PROP3_CONFIG = {"p": 64, "angle_deg": 60.0, "kappa": 200.0, "eps": (0.01, 0.02, 0.05, 0.1)}


def prop3_suite(seed: int = 0, samples: int = 100_000, tau: float = 0.1) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    c = PROP3_CONFIG
    mix = ClassMixture(np.array([0.5, 0.5]), two_class_means(c["p"], c["angle_deg"]), np.full(2, c["kappa"]))
    res = excess_risk_scaling(mix, c["eps"], rng, eval_per_class=samples, tau=tau)
    passed = bool(np.isfinite(res.slope) and 0.8 <= res.slope <= 1.2)
    metrics = {"slope": res.slope, "gaps": res.gaps, "stderr": res.stderr, "excluded": res.excluded}
    return SuiteResult("prop3", passed, metrics, {**c, "tau": tau, "eval_per_class": samples}, time.perf_counter() - t0)


SUITES = {
    "bessel": bessel_suite,
    "mgf": mgf_suite,
    "prop1": prop1_suite,
    "grad": grad_suite,
    "lemma1": lemma1_suite,
    "lemma3": lemma3_suite,
    "prop2": prop2_suite,
    "prop3": prop3_suite,
}


def run(names, seed: int = 0, samples: int | None = None) -> list[SuiteResult]:
    results = []
    for name in names:
        fn = SUITES[name]
        results.append(fn(seed=seed) if samples is None else fn(seed=seed, samples=samples))
    return results

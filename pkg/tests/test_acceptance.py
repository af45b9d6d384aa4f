"""Acceptance run: one PASS/FAIL line per criterion.

Each test records its line through the ``criterion`` fixture before
asserting, so the summary shows every outcome even when one fails.
Run with ``pytest tests/test_acceptance.py -s`` to see lines inline.
"""

import math
import time

import mpmath
import numpy as np

from proco import special_fn as sf
from proco import verify
from proco.estimation import EpochEstimator
from proco.harness import PseudoLabelConfig, long_tail_comparison, pseudo_label
from proco.vmf import ClassMixture, VmfParams, random_unit, sample, sample_mixture, sample_uniform_sphere

SEED = 1


def _mp_log_i(nu: int, kappa: float) -> float:
    with mpmath.workdps(40):
        return float(mpmath.log(mpmath.besseli(nu, mpmath.mpf(kappa))))


def test_c01_bessel(criterion):
    kappas = np.logspace(-3, math.log10(50.0), 40)
    worst = 0.0
    for nu in range(65):
        got = sf.log_bessel_i_regime(nu, kappas, "miller")
        ref = np.array([_mp_log_i(nu, k) for k in kappas])
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))

    cont = 0.0
    for nu in range(0, 1025, 32):
        k_series = max(sf.SERIES_FLOOR, nu / 2.0)
        k_asym = max(sf.ASYMPTOTIC_KAPPA, sf.ASYMPTOTIC_RATIO * nu, float(nu * nu))
        for k, pair in ((k_series, ("series", "miller")), (k_asym, ("miller", "hankel"))):
            a, b = (sf.log_bessel_i_regime(nu, k, r) for r in pair)
            cont = max(cont, abs(a - b) / abs(b))

    dense = np.logspace(-3, math.log10(50.0), 400)
    t0 = time.perf_counter()
    for nu in range(65):
        sf.log_bessel_i(nu, dense)
    seconds = time.perf_counter() - t0

    passed = worst <= 1e-10 and cont <= 1e-8 and seconds < 5.0
    criterion(1, "Bessel correctness", passed, f"max rel err {worst:.2e}, switch {cont:.2e}, grid {seconds:.2f}s")
    assert passed


def test_c02_mgf(criterion):
    res = verify.mgf_suite(seed=SEED, samples=100_000)
    n = len(res.metrics["cases"])
    passed = res.passed and n == 12
    criterion(2, "MGF identity", passed, f"{n} cases, max |z| {res.metrics['max_abs_z']:.2f}")
    assert passed


def test_c03_large_batch_limit(criterion):
    res = verify.prop1_suite(seed=SEED, samples=100_000)
    passed = res.passed and res.seconds < 60.0
    g = res.metrics["gaps"]
    detail = (
        f"out gaps {', '.join(f'{v:.4f}' for v in g['out'])}; "
        f"in gaps {', '.join(f'{v:.2e}' for v in g['in'])}; {res.seconds:.1f}s"
    )
    criterion(3, "large-batch limit", passed, detail)
    assert passed


def test_c04_gradients(criterion):
    res = verify.grad_suite(seed=SEED, configs=100)
    m = res.metrics
    criterion(4, "gradient fidelity", res.passed, f"100 configs max rel {m['max_rel_err']:.2e}, end to end {m['end_to_end_rel_err']:.2e}")
    assert res.passed


def test_c05_asymptotic(criterion):
    res = verify.lemma1_suite(seed=SEED, anchors=100)
    criterion(5, "large-kappa expansion", res.passed, f"max rel gap {res.metrics['max_rel_gap']:.4f}")
    assert res.passed


def test_c06_estimation_round_trip(criterion):
    rng = np.random.default_rng(SEED)
    n = 100_000
    rows, passed = [], True
    for p in (8, 64, 128):
        for kappa in (5.0, 50.0, 500.0):
            mu = random_unit(rng, p)
            est = EpochEstimator(1, p)
            est.update(sample(VmfParams(mu, kappa), rng, n), np.zeros(n, dtype=int))
            est.commit_epoch()
            fit = est.estimate_params([1.0])
            angle = math.degrees(math.acos(min(1.0, float(fit.mus[0] @ mu))))
            inv_err = abs(kappa / fit.kappas[0] - 1.0)
            ok = angle <= 1.0 and inv_err <= 0.1
            passed &= ok
            rows.append(f"p={p} k={kappa:g} {angle:.2f}deg {100 * inv_err:.1f}%{'' if ok else ' X'}")
    criterion(6, "estimation round trip", passed, "; ".join(rows))
    assert passed


def test_c07_bound_frequency(criterion):
    res = verify.prop2_suite(seed=SEED)
    m = res.metrics
    criterion(7, "bound violation frequency", res.passed, f"{m['violations']} violations, allowed {m['allowed']:.1f}, min gap {m['min_gap']:.3f}")
    assert res.passed


def test_c08_excess_risk_slope(criterion):
    res = verify.prop3_suite(seed=SEED)
    criterion(8, "excess risk scaling", res.passed, f"slope {res.metrics['slope']:.3f}")
    assert res.passed


def test_c09_long_tail(criterion):
    t0 = time.perf_counter()
    rep = long_tail_comparison(seeds=range(5))
    per_seed = (time.perf_counter() - t0) / 5
    passed = rep.improved and per_seed < 600.0
    detail = (
        f"few alpha=1 {rep.mean_few_with:.3f} vs alpha=0 {rep.mean_few_without:.3f}; "
        f"per seed {[round(v, 3) for v in rep.few_with]} vs {[round(v, 3) for v in rep.few_without]}; {per_seed:.1f}s/seed"
    )
    criterion(9, "desk-scale long tail", passed, detail)
    assert passed


def test_c10_pseudo_labels(criterion):
    rng = np.random.default_rng(SEED)
    p, k = 16, 4
    uniform = ClassMixture(np.full(k, 1 / k), sample_uniform_sphere(rng, k, p), np.zeros(k))
    labels, _ = pseudo_label(sample_uniform_sphere(rng, 5000, p), uniform, 0.1)
    emitted = int(np.sum(labels >= 0))

    # well separated classes: orthogonal means, concentration 100
    confident = ClassMixture(np.full(k, 1 / k), np.eye(p)[:k], np.full(k, 100.0))
    z, y = sample_mixture(confident, rng, 20_000)
    labels, _ = pseudo_label(z, confident, 0.1, PseudoLabelConfig(threshold=0.95))
    accepted = labels >= 0
    precision = float(np.mean(labels[accepted] == y[accepted])) if accepted.any() else 0.0

    passed = emitted == 0 and accepted.any() and precision >= 0.95
    criterion(10, "pseudo-label sanity", passed, f"uniform emitted {emitted}; constructed accepted {int(accepted.sum())}, precision {precision:.4f}")
    assert passed


def test_c11_variance_inequality(criterion):
    res = verify.lemma3_suite(seed=SEED, configs=10)
    criterion(11, "variance inequality", res.passed, f"{len(res.metrics['cases'])} checks, min margin {res.metrics['min_margin']:.3g}")
    assert res.passed

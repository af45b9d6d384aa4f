import math

import numpy as np
import pytest

from proco.bounds import (
    BinaryBoundInputs,
    binomial_allowance,
    bound_violation_study,
    excess_risk_scaling,
    expected_loss,
    fit_mixture,
    generalization_bound,
    perturb_mixture,
    variance_inequality_check,
)
from proco.loss import proco_loss
from proco.verify import two_class_means
from proco.vmf import ClassMixture, VmfParams, sample


@pytest.fixture
def binary():
    return ClassMixture(np.array([0.6, 0.4]), two_class_means(16, 60.0), np.array([50.0, 75.0]))


class TestInputs:
    def test_w_and_b(self, binary):
        inp = BinaryBoundInputs(binary, (np.zeros((1, 16)), np.zeros((1, 16))), 0.1, 0.1)
        np.testing.assert_allclose(inp.w, (binary.mus[1] - binary.mus[0]) / 0.1)
        assert inp.b == pytest.approx(50.0 * (1 / 75 - 1 / 50) + math.log(0.4 / 0.6))

    def test_validation(self, binary):
        z = (np.zeros((1, 16)), np.zeros((1, 16)))
        with pytest.raises(ValueError):
            BinaryBoundInputs(binary, z, 1.5, 0.1)
        with pytest.raises(ValueError):
            BinaryBoundInputs(binary, (np.zeros((0, 16)), z[1]), 0.1, 0.1)


class TestBound:
    def test_terms(self, binary, rng):
        train = tuple(sample(binary.component(j), rng, 50) for j in range(2))
        inp = BinaryBoundInputs(binary, train, 0.1, 0.1)
        res = generalization_bound(inp)
        for j, terms in enumerate(res.per_class):
            emp = proco_loss(train[j], np.full(50, j), binary, 0.1).value.mean()
            assert terms.empirical_loss == pytest.approx(emp)
            assert terms.variance_term > 0 and terms.range_term > 0
        assert res.total == pytest.approx(sum(pi * t.bound for pi, t in zip(binary.priors, res.per_class)))

    def test_single_sample_has_no_variance_term(self, binary, rng):
        train = tuple(sample(binary.component(j), rng, 1) for j in range(2))
        res = generalization_bound(BinaryBoundInputs(binary, train, 0.1, 0.1))
        assert all(t.variance_term == 0 for t in res.per_class)

    def test_bound_shrinks_with_n(self, binary, rng):
        small = tuple(sample(binary.component(j), rng, 20) for j in range(2))
        large = tuple(sample(binary.component(j), rng, 2000) for j in range(2))
        r_small = generalization_bound(BinaryBoundInputs(binary, small, 0.1, 0.1)).per_class[0]
        r_large = generalization_bound(BinaryBoundInputs(binary, large, 0.1, 0.1)).per_class[0]
        assert r_large.variance_term + r_large.range_term < r_small.variance_term + r_small.range_term

    def test_allowance(self):
        assert binomial_allowance(200, 0.1) == pytest.approx(20 + 1.96 * math.sqrt(18))

    def test_violation_study_small(self, binary, rng):
        rep = bound_violation_study(binary, rng, trials=10, n_per_class=100, heldout_per_class=5000)
        assert rep.trials == 10 and len(rep.bounds) == 10
        assert rep.passed
        assert set(rep.to_dict()) >= {"violations", "allowed", "gaps", "passed"}


class TestFitting:
    def test_fit_and_expected_loss(self, binary, rng):
        train = tuple(sample(binary.component(j), rng, 5000) for j in range(2))
        fitted = fit_mixture(train, binary.priors)
        assert np.all(np.abs(fitted.kappas / binary.kappas - 1) < 0.1)
        held = tuple(sample(binary.component(j), rng, 5000) for j in range(2))
        assert expected_loss(fitted, held, binary.priors, 0.1) == pytest.approx(expected_loss(binary, held, binary.priors, 0.1), abs=0.05)


class TestPerturbation:
    def test_keeps_unit_means_and_scales_inverse_kappa(self, binary, rng):
        dirs = rng.standard_normal((2, 16))
        out = perturb_mixture(binary, dirs, 0.05)
        np.testing.assert_allclose(np.linalg.norm(out.mus, axis=1), 1.0)
        np.testing.assert_allclose(1 / out.kappas, 1.05 / binary.kappas)

    def test_scaling_fit(self, rng):
        mix = ClassMixture(np.array([0.5, 0.5]), two_class_means(64, 60.0), np.full(2, 200.0))
        res = excess_risk_scaling(mix, [0.0, 0.02, 0.05, 0.1], rng, eval_per_class=20_000)
        assert res.gaps[0] == 0.0
        assert 0.6 < res.slope < 1.4

    def test_scaling_needs_binary(self, rng):
        mix = ClassMixture(np.full(3, 1 / 3), np.stack([np.eye(4)[i] for i in range(3)]), np.ones(3))
        with pytest.raises(ValueError):
            excess_risk_scaling(mix, [0.1], rng)


class TestVarianceInequality:
    def test_holds_on_example(self, rng):
        params = VmfParams(two_class_means(8, 0.0)[0], 30.0)
        chk = variance_inequality_check(params, np.ones(8), 0.5, 1.0, rng, n=20_000)
        assert chk.var_log <= chk.var_lin
        assert chk.holds

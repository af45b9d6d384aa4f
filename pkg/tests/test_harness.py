import dataclasses
import json

import numpy as np
import pytest
from scipy import stats

from proco.datagen import GroupSplit, LongTailSpec, generate
from proco.harness import (
    PseudoLabelConfig,
    ToyModel,
    TrainConfig,
    TrainingDiverged,
    batch_objective,
    evaluate,
    finite_difference_check,
    pseudo_label,
    split_labels,
    train,
    train_semisup,
)
from proco.loss import ProcoConfig
from proco.verify import random_mixture
from proco.vmf import ClassMixture, sample_uniform_sphere


@pytest.fixture(scope="module")
def small_ds():
    return generate(LongTailSpec(n_classes=4, n_max=120, gamma=10, p_raw=8, kappa=15.0, n_test_per_class=30, seed=2))


def quick(**kw):
    base = dict(p=8, hidden=12, epochs=3, batch_size=32, seed=5)
    return TrainConfig(**{**base, **kw})


class TestModel:
    @pytest.mark.parametrize("projection", [False, True])
    def test_unit_features(self, rng, projection):
        model = ToyModel.init(rng, 6, 10, 8, 3, projection)
        z = model.forward(sample_uniform_sphere(rng, 50, 6)).z
        assert np.all(np.abs(np.linalg.norm(z, axis=1) - 1) < 1e-9)

    @pytest.mark.parametrize("projection", [False, True])
    def test_end_to_end_gradient(self, rng, projection):
        model = ToyModel.init(rng, 6, 5, 4, 3, projection)
        mix = random_mixture(rng, 4, 3)
        x = sample_uniform_sphere(rng, 7, 6)
        err = finite_difference_check(model, x, rng.integers(0, 3, 7), mix, mix.priors, ProcoConfig(tau=0.5, p=4))
        assert err <= 1e-5

    def test_alpha_zero_leaves_projection_untouched(self, rng):
        model = ToyModel.init(rng, 6, 5, 4, 3, projection=True)
        mix = random_mixture(rng, 4, 3)
        _, grads, _ = batch_objective(model, sample_uniform_sphere(rng, 9, 6), rng.integers(0, 3, 9), mix, mix.priors, ProcoConfig(alpha=0.0, p=4))
        assert np.all(grads["Wp"] == 0.0)
        assert np.any(grads["W1"] != 0.0)


class TestTrain:
    def test_deterministic(self, small_ds):
        _, a, _ = train(small_ds, quick())
        _, b, _ = train(small_ds, quick())
        assert a.to_json() == b.to_json()

    def test_alpha_zero_ignores_contrastive_branch(self, small_ds):
        # with alpha = 0 the temperature only enters through the unused branch
        m1, _, _ = train(small_ds, quick(alpha=0.0, tau=0.1))
        m2, _, _ = train(small_ds, quick(alpha=0.0, tau=0.7))
        for name in m1.params:
            np.testing.assert_array_equal(m1.params[name], m2.params[name])

    def test_committed_buffer_frozen_within_epoch(self, small_ds):
        seen: dict[int, set] = {}

        def hook(epoch, step, est):
            seen.setdefault(epoch, set()).add(est.committed_digest())

        train(small_ds, quick(), step_hook=hook)
        assert all(len(d) == 1 for d in seen.values())
        assert len({next(iter(d)) for d in seen.values()}) == len(seen)

    def test_report_contents(self, small_ds, tmp_path):
        _, rep, _ = train(small_ds, quick())
        assert len(rep.epochs) == 3 and rep.seed == 5
        assert rep.config["train"]["alpha"] == 1.0
        assert all(0 <= a <= 1 for a in rep.group_accuracy.values())
        rep.write(tmp_path / "r.json")
        assert json.loads((tmp_path / "r.json").read_text())["seed"] == 5
        rep.append_epochs_csv(tmp_path / "e.csv")
        rep.append_epochs_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0].startswith("seed,epoch") and len(lines) == 7

    def test_learns(self, small_ds):
        _, rep, _ = train(small_ds, quick(epochs=15))
        assert rep.overall_accuracy > 0.6

    def test_divergence(self, small_ds):
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(small_ds, quick(lr=1e300))

    def test_schedule(self):
        cfg = TrainConfig(epochs=10, lr=0.2, constant_fraction=0.5)
        rates = [cfg.learning_rate(e) for e in range(10)]
        assert rates[:5] == [0.2] * 5
        assert all(a > b for a, b in zip(rates[4:], rates[5:]))


class TestEvaluate:
    def test_perfect_separation(self):
        k = 4
        params = {"W1": 5 * np.eye(k), "b1": np.zeros(k), "W2": np.eye(k), "b2": np.zeros(k), "W3": np.eye(k), "b3": np.zeros(k)}
        model = ToyModel(params, projection=False)
        x, y = np.eye(k), np.arange(k)
        assert evaluate(model, x, y, [200, 50, 30, 5])["overall"] == 1.0

    def test_random_labels_near_chance(self, rng):
        k, n = 5, 4000
        model = ToyModel.init(rng, 6, 8, 4, k)
        x = sample_uniform_sphere(rng, n, 6)
        acc = evaluate(model, x, rng.integers(0, k, n), [10] * k)["overall"]
        lo, hi = stats.binom.interval(0.999, n, 1 / k)
        assert lo / n <= acc <= hi / n

    def test_groups_aggregate_to_overall(self, small_ds):
        model, _, _ = train(small_ds, quick())
        m = evaluate(model, small_ds.x_test, small_ds.y_test, small_ds.counts)
        groups = np.array(GroupSplit().assign(small_ds.counts))
        weights = {g: np.isin(small_ds.y_test, np.flatnonzero(groups == g)).sum() for g in m["groups"]}
        total = sum(weights[g] * m["groups"][g] for g in m["groups"]) / sum(weights.values())
        assert total == pytest.approx(m["overall"])


class TestPseudoLabel:
    def test_uniform_mixture_emits_nothing(self, rng):
        mix = ClassMixture(np.full(4, 0.25), sample_uniform_sphere(rng, 4, 8), np.zeros(4))
        labels, conf = pseudo_label(sample_uniform_sphere(rng, 100, 8), mix, 0.1)
        assert np.all(labels == -1)
        np.testing.assert_allclose(conf, 0.25)

    def test_confident_case(self):
        p = 8
        mus = np.eye(p)[:3]
        mix = ClassMixture(np.full(3, 1 / 3), mus, np.array([500.0, 5.0, 5.0]))
        label, conf = pseudo_label(mus[0], mix, 0.1)
        assert label == 0 and conf >= 0.99

    def test_threshold_is_inclusive(self):
        mus = np.eye(4)[:2]
        mix = ClassMixture(np.array([0.5, 0.5]), mus, np.array([20.0, 20.0]))
        z = np.array([0.8, 0.6, 0.0, 0.0])
        _, conf = pseudo_label(z, mix, 0.1, PseudoLabelConfig(threshold=0.5))
        assert pseudo_label(z, mix, 0.1, PseudoLabelConfig(threshold=conf))[0] == 0
        assert pseudo_label(z, mix, 0.1, PseudoLabelConfig(threshold=np.nextafter(conf, 2.0)))[0] is None


class TestSemisup:
    def test_nothing_accepted_equals_supervised(self, small_ds):
        labelled, unlabelled = split_labels(small_ds, 0.3, np.random.default_rng(0))
        cfg = quick()
        m_semi, rep, _ = train_semisup(small_ds, labelled, unlabelled, cfg, PseudoLabelConfig(threshold=1.01))
        sub = dataclasses.replace(small_ds, x_train=small_ds.x_train[labelled], y_train=small_ds.y_train[labelled])
        m_sup, _, _ = train(sub, cfg)
        assert rep.pseudo_label["accepted"] == 0
        for name in m_sup.params:
            np.testing.assert_array_equal(m_semi.params[name], m_sup.params[name])

    def test_reports_precision_per_group(self):
        ds = generate(LongTailSpec(n_classes=6, n_max=300, gamma=10, p_raw=8, kappa=30.0, seed=4))
        labelled, unlabelled = split_labels(ds, 0.2, np.random.default_rng(1))
        _, rep, _ = train_semisup(ds, labelled, unlabelled, quick(epochs=8))
        pl = rep.pseudo_label
        assert pl["accepted"] > 0 and pl["precision"] > 0.9
        assert set(pl["groups"]) <= {"many", "medium", "few"}

    def test_deterministic(self, small_ds):
        labelled, unlabelled = split_labels(small_ds, 0.5, np.random.default_rng(0))
        a = train_semisup(small_ds, labelled, unlabelled, quick())[1]
        b = train_semisup(small_ds, labelled, unlabelled, quick())[1]
        assert a.to_json() == b.to_json()

    def test_split_labels(self, small_ds):
        labelled, unlabelled = split_labels(small_ds, 0.1, np.random.default_rng(0))
        assert len(np.intersect1d(labelled, unlabelled)) == 0
        assert len(labelled) + len(unlabelled) == len(small_ds.y_train)
        assert set(small_ds.y_train[labelled]) == set(range(small_ds.n_classes))
        with pytest.raises(ValueError):
            split_labels(small_ds, 0.0, np.random.default_rng(0))

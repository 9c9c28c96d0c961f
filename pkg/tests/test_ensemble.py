import numpy as np
import pytest

from gpuq import diffcore as dc
from gpuq.ensemble import (DeepEnsemble, MLPMember, aggregate_regression, classify_from_logits, ensemble_classify,
                           member_classification_loss, member_regression_loss)
from gpuq.metrics import nll_classification

from conftest import check_grad


class TestMemberLoss:
    def _pinned(self, mean, var):
        # single linear layer whose outputs are exactly (mean, softplus^-1(var - 1e-6))
        m = MLPMember(1, [], 1)
        raw = np.log(np.expm1(var - 1e-6))
        m.weights[0].set(np.zeros((1, 2)))
        m.biases[0].set(np.array([mean, raw]))
        return m

    def test_zero_at_special_variance(self):
        m = self._pinned(0.7, 1 / (2 * np.pi))
        assert float(member_regression_loss(m, [[0.0]], [0.7]).value) == pytest.approx(0.0, abs=1e-9)

    def test_variance_adapting_to_residual_lowers_loss(self):
        y, mu = [2.0], 0.5
        losses = [float(member_regression_loss(self._pinned(mu, v), [[0.0]], y).value) for v in (0.2, 1.0, 2.25)]
        assert losses[0] > losses[1] > losses[2]

    def test_additive_over_batch(self, rng):
        m = MLPMember(3, [4], 1, seed=1)
        x, y = rng.standard_normal((1, 3)), [0.3]
        one = float(member_regression_loss(m, x, y).value)
        two = float(member_regression_loss(m, np.vstack([x, x]), [0.3, 0.3]).value)
        # BLAS may block one row and two rows differently, so allow the last ulp
        assert two == pytest.approx(2 * one, rel=4e-16)

    def test_uniform_classification_loss(self):
        m = MLPMember(1, [], 2)
        m.weights[0].set(np.zeros((1, 4)))
        m.biases[0].set(np.zeros(4))
        loss = float(member_classification_loss(m, np.zeros((3, 1)), [0, 1, 1]).value) / 3
        assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_confident_correct_is_near_zero(self):
        m = MLPMember(1, [], 2)
        m.weights[0].set(np.zeros((1, 4)))
        m.biases[0].set(np.array([40.0, -40.0, 0.0, 0.0]))
        assert float(member_classification_loss(m, np.zeros((1, 1)), [0]).value) == pytest.approx(0.0, abs=1e-30)

    def test_order_invariant(self, rng):
        m = MLPMember(2, [5], 3, seed=2)
        X, y = rng.standard_normal((6, 2)), rng.integers(0, 3, 6)
        p = rng.permutation(6)
        a = float(member_classification_loss(m, X, y).value)
        b = float(member_classification_loss(m, X[p], y[p]).value)
        assert a == pytest.approx(b, rel=1e-14)

    @pytest.mark.parametrize("task", ["regression", "classification"])
    def test_gradient(self, rng, task):
        X = rng.standard_normal((6, 2))
        y = rng.standard_normal(6) if task == "regression" else rng.integers(0, 2, 6)
        ens = DeepEnsemble(2, [4, 3], num_models=2, task=task, seed=1)
        check_grad(lambda: ens.loss(X, y), ens.parameters())


class TestAggregation:
    def test_identical_members(self):
        mu, var = aggregate_regression(np.full((4, 3), 0.7), np.full((4, 3), 0.2))
        np.testing.assert_allclose(mu, 0.7)
        np.testing.assert_allclose(var, 0.2)

    def test_two_point_members(self):
        mu, var = aggregate_regression([1.0, -1.0], [0.0, 0.0])
        assert mu == 0.0 and var == 1.0

    def test_sampling_oracle(self, rng):
        K = 7
        means, variances = rng.normal(0, 2, K), rng.uniform(0.1, 2, K)
        mu, var = aggregate_regression(means, variances)
        comp = rng.integers(0, K, 1_000_000)
        draws = means[comp] + np.sqrt(variances[comp]) * rng.standard_normal(1_000_000)
        assert abs(draws.mean() - mu) <= 0.01 * np.sqrt(var)
        assert draws.var() == pytest.approx(var, rel=0.01)


class TestClassify:
    def test_zero_variance_averages_softmax(self, rng):
        means = rng.standard_normal((3, 5, 4))
        p = classify_from_logits(means, np.zeros_like(means), 10, rng)
        e = np.exp(means - means.max(-1, keepdims=True))
        np.testing.assert_allclose(p, (e / e.sum(-1, keepdims=True)).mean(0), atol=1e-12)

    def test_equal_logits_uniform(self, rng):
        p = classify_from_logits(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), 5, rng)
        np.testing.assert_allclose(p, 1 / 3)

    def test_stable_across_seeds(self):
        r = np.random.default_rng(0)
        means, variances = r.standard_normal((2, 3, 3)), r.uniform(0.5, 2, (2, 3, 3))
        a = classify_from_logits(means, variances, 100_000, np.random.default_rng(1))
        b = classify_from_logits(means, variances, 100_000, np.random.default_rng(2))
        assert np.max(np.abs(a - b)) <= 0.005


class TestDeepEnsemble:
    def test_needs_two_members(self):
        with pytest.raises(ValueError):
            DeepEnsemble(2, [4], num_models=1)

    def test_members_differ(self):
        ens = DeepEnsemble(2, [4], num_models=3, seed=0)
        w = [m.weights[0].value for m in ens.members]
        assert not np.array_equal(w[0], w[1])

    def test_seeded_construction_reproducible(self):
        a, b = DeepEnsemble(2, [4], seed=5), DeepEnsemble(2, [4], seed=5)
        for k, v in a.state_dict().items():
            np.testing.assert_array_equal(v, b.state_dict()[k])

    def test_regression_predict_positive_variance(self, rng):
        ens = DeepEnsemble(3, [8], num_models=4)
        pred = ens.predict(rng.standard_normal((10, 3)))
        assert pred.mean.shape == (10,) and np.all(pred.var > 0)

    def test_training_on_blobs(self, rng):
        X = np.vstack([rng.normal(-2, 1, (50, 2)), rng.normal(2, 1, (50, 2))])
        y = np.repeat([0, 1], 50)
        ens = DeepEnsemble(2, [16], num_models=3, task="classification", seed=0)
        opt = dc.Adam(ens.parameters(), lr=0.02)
        for _ in range(150):
            opt.step(ens.loss(X, y))
        probs = ensemble_classify(ens, X, samples_per_member=50)
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)
        assert np.mean(probs.argmax(1) == y) > 0.95
        assert nll_classification(probs, y) < 0.3

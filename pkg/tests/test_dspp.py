import numpy as np
import pytest
from scipy.integrate import trapezoid

from gpuq import diffcore as dc
from gpuq.dspp import (dspp_components, dspp_log_density, dspp_objective, dspp_predict, gauss_hermite_rule,
                       make_dspp)
from gpuq.predictive import GaussianMarginals

from conftest import check_grad


def _data(rng, n=8, d=2):
    X = rng.standard_normal((n, d))
    return X, np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)


def _perturb_q(model, rng, scale=0.3):
    for layer in model.layers:
        M, H = layer.num_inducing, layer.width
        L = np.tril(scale * rng.standard_normal((H, M, M)), -1) + np.eye(M) * rng.uniform(0.3, 1.0, (H, M, 1))
        layer.set_q(rng.standard_normal((H, M)) * scale, L)


class TestQuadratureRule:
    @pytest.mark.parametrize("Q", [1, 3, 8])
    def test_standard_normal_moments(self, Q):
        x, w = gauss_hermite_rule(Q)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        # exact for polynomials up to degree 2Q - 1
        for k, moment in [(1, 0.0), (2, 1.0), (4, 3.0)]:
            if k <= 2 * Q - 1:
                assert np.sum(w * x**k) == pytest.approx(moment, abs=1e-12)

    def test_sites_initialized_from_rule(self, rng):
        X, _ = _data(rng)
        model = make_dspp(X, [2, 2], "regression", num_inducing=3, num_quadrature=5)
        nodes, weights = gauss_hermite_rule(5)
        assert model.sites.shape == (2, 5)
        np.testing.assert_allclose(model.sites.value, np.tile(nodes, (2, 1)))
        np.testing.assert_allclose(model.weights(), weights, atol=1e-14)


class TestComponents:
    def test_single_zero_site_is_mean_propagation(self, rng):
        X, _ = _data(rng)
        model = make_dspp(X, [2, 1], "regression", num_inducing=4, num_quadrature=1)
        _perturb_q(model, rng)
        model.sites.set(np.zeros((2, 1)))
        (mean, var), w = dspp_components(model, X)
        F = X
        for layer in model.hidden:
            F = layer.predict(F).mean
        ref = model.layers[-1].predict(F)
        np.testing.assert_allclose(mean[0], ref.mean, atol=1e-12)
        np.testing.assert_allclose(var[0], ref.var, atol=1e-12)
        assert w.tolist() == [1.0]

    def test_no_hidden_layers_identical_components(self, rng):
        X, _ = _data(rng)
        model = make_dspp(X, [], "regression", num_inducing=4, num_quadrature=6)
        _perturb_q(model, rng)
        (mean, var), _ = dspp_components(model, X)
        for j in range(1, 6):
            np.testing.assert_array_equal(mean[j], mean[0])
            np.testing.assert_array_equal(var[j], var[0])

    def test_weights_on_simplex(self, rng):
        X, _ = _data(rng)
        model = make_dspp(X, [2], "regression", num_inducing=4)
        model.weight_logits.set(rng.standard_normal(8) * 3)
        w = model.weights()
        assert np.all(w > 0) and w.sum() == pytest.approx(1.0, abs=1e-12)


class TestLogDensity:
    def test_single_site_is_gaussian(self, rng):
        X, y = _data(rng)
        model = make_dspp(X, [2], "regression", num_inducing=4, num_quadrature=1, noise=0.3)
        _perturb_q(model, rng)
        (mean, var), _ = dspp_components(model, X)
        ref = GaussianMarginals(mean[0, :, 0], var[0, :, 0] + 0.3).log_prob(y)
        np.testing.assert_allclose(dspp_log_density(model, X, y), ref, atol=1e-12)

    def test_two_equal_components(self, rng):
        X, y = _data(rng)
        one = make_dspp(X, [2], "regression", num_inducing=4, num_quadrature=1, seed=3)
        two = make_dspp(X, [2], "regression", num_inducing=4, num_quadrature=2, seed=3)
        two.sites.set(np.zeros((1, 2)))
        one.sites.set(np.zeros((1, 1)))
        np.testing.assert_allclose(dspp_log_density(two, X, y), dspp_log_density(one, X, y), atol=1e-12)

    def test_matches_direct_mixture_density(self, rng):
        X, y = _data(rng)
        model = make_dspp(X, [2], "regression", num_inducing=4, num_quadrature=5)
        _perturb_q(model, rng)
        model.weight_logits.set(rng.standard_normal(5))
        (mean, var), w = dspp_components(model, X)
        noise = float(model.likelihood.noise.get())
        v = var[..., 0] + noise
        dens = np.sum(w[:, None] * np.exp(-0.5 * (y - mean[..., 0]) ** 2 / v) / np.sqrt(2 * np.pi * v), axis=0)
        np.testing.assert_allclose(dspp_log_density(model, X, y), np.log(dens), atol=1e-10)
        pred = dspp_predict(model, X)
        np.testing.assert_allclose(pred.log_prob(y), np.log(dens), atol=1e-10)

    def test_density_integrates_to_one(self, rng):
        X = rng.uniform(-2, 2, (50, 1))
        model = make_dspp(X, [1], "regression", num_inducing=5, num_quadrature=6)
        _perturb_q(model, rng)
        pred = dspp_predict(model, X)
        grid = np.linspace(-15, 15, 20_001)
        for i in range(50):
            dens = np.sum(pred.weights * np.exp(-0.5 * (grid[:, None] - pred.means[i]) ** 2 / pred.variances[i])
                          / np.sqrt(2 * np.pi * pred.variances[i]), axis=1)
            assert trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


class TestObjective:
    def test_bit_identical(self, rng):
        X, y = _data(rng)
        model = make_dspp(X, [2], "regression", num_inducing=4)
        _perturb_q(model, rng)
        a = dspp_objective(model, X, y, 20).value
        b = dspp_objective(model, X, y, 20).value
        assert a.tobytes() == b.tobytes()

    def test_beta_zero(self, rng):
        X, y = _data(rng)
        model = make_dspp(X, [2], "regression", num_inducing=4, beta=0.0)
        _perturb_q(model, rng)
        expected = dspp_log_density(model, X, y).sum() * 2.0
        assert float(dspp_objective(model, X, y, 16).value) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("task", ["regression", "classification"])
    def test_gradient(self, rng, task):
        X, y = _data(rng, 6, 1)
        if task == "classification":
            y = (y > 0).astype(int)
        model = make_dspp(X, [1, 1], task, num_inducing=3, num_quadrature=3)
        _perturb_q(model, rng)
        model.weight_logits.set(rng.standard_normal(3))
        check_grad(lambda: dspp_objective(model, X, y, 6), model.parameters())

    def test_weights_stay_normalized_in_training(self, rng):
        X = rng.uniform(-3, 3, (64, 1))
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(64)
        model = make_dspp(X, [1], "regression", num_inducing=6)
        opt = dc.Adam(model.parameters(), lr=0.05)
        losses = [opt.step(model.loss(X, y, 64, None)) for _ in range(200)]
        assert abs(model.weights().sum() - 1.0) <= 1e-12
        assert losses[-1] < losses[0]


class TestPredict:
    def test_equal_logits_uniform(self, rng):
        X, _ = _data(rng)
        model = make_dspp(X, [2], "classification", num_classes=4, num_inducing=4)
        for layer in model.layers:
            layer.zero_variance = True
        np.testing.assert_allclose(dspp_predict(model, X).probs, 0.25, atol=1e-12)

    def test_mixture_moments_sampling_oracle(self, rng):
        X, _ = _data(rng, 4)
        model = make_dspp(X, [2], "regression", num_inducing=4)
        _perturb_q(model, rng)
        model.weight_logits.set(rng.standard_normal(8))
        pred = dspp_predict(model, X)
        np.testing.assert_allclose(pred.mean(), pred.means @ model.weights(), rtol=1e-12)
        assert np.all(pred.variance() >= 0)
        draws = pred.sample(np.random.default_rng(2), 1_000_000)
        assert np.all(np.abs(draws.mean(axis=1) - pred.mean()) <= 0.01 * np.sqrt(pred.variance()))
        np.testing.assert_allclose(draws.var(axis=1), pred.variance(), rtol=0.01)

import numpy as np
import pytest

from gpuq import diffcore as dc
from gpuq.deepgp import DGP, build_layers, dgp_elbo, dgp_forward_samples, dgp_predict, make_dgp
from gpuq.likelihoods import GaussianLikelihood
from gpuq.predictive import Categorical, GaussianMixture
from gpuq.svgp import svgp_elbo, svgp_marginals

from conftest import check_grad


def _data(rng, n=8, d=2):
    X = rng.standard_normal((n, d))
    return X, np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)


def _perturb_q(model, rng, scale=0.3):
    for layer in model.layers:
        M = layer.num_inducing
        H = layer.width
        L = np.tril(scale * rng.standard_normal((H, M, M)), -1) + np.eye(M) * rng.uniform(0.3, 1.0, (H, M, 1))
        layer.set_q(rng.standard_normal((H, M)) * scale, L)


class TestConstruction:
    def test_layer_dims_chain(self, rng):
        X, _ = _data(rng, 20, 3)
        layers = build_layers(X, [2, 4], 1, 5, rng)
        assert [(l.input_dim, l.width) for l in layers] == [(3, 2), (2, 4), (4, 1)]

    def test_mismatched_layers_rejected(self, rng):
        X, _ = _data(rng)
        a = build_layers(X, [2], 1, 4, rng)
        b = build_layers(X, [3], 1, 4, rng)
        with pytest.raises(ValueError):
            DGP([a[0], b[1]], GaussianLikelihood())

    def test_more_inducing_than_data(self, rng):
        X, y = _data(rng, 5)
        model = make_dgp(X, [], "regression", num_inducing=9)
        assert model.layers[0].num_inducing == 9


class TestSampling:
    def test_zero_hidden_variance_gives_identical_samples(self, rng):
        X, _ = _data(rng)
        model = make_dgp(X, [2, 2], "regression", num_inducing=4, num_samples=6)
        _perturb_q(model, rng)
        for layer in model.hidden:
            layer.zero_variance = True
        samples = dgp_forward_samples(model, X, 6, seed=3)
        for s in samples[1:]:
            np.testing.assert_array_equal(s.mean, samples[0].mean)
            np.testing.assert_array_equal(s.var, samples[0].var)
        pred = dgp_predict(model, X, 6, seed=3)
        np.testing.assert_allclose(pred.variance(), pred.variances[:, 0], rtol=1e-10)

    def test_single_layer_matches_svgp(self, rng):
        X, _ = _data(rng)
        model = make_dgp(X, [], "regression", num_inducing=4)
        _perturb_q(model, rng)
        ref = svgp_marginals(model.layers[0], X)
        for S in (1, 5):
            for s in dgp_forward_samples(model, X, S):
                np.testing.assert_array_equal(s.mean, ref.mean)
                np.testing.assert_array_equal(s.var, ref.var)

    def test_hidden_sample_mean(self, rng):
        X, _ = _data(rng, 6)
        model = make_dgp(X, [1], "regression", num_inducing=3)
        _perturb_q(model, rng)
        x = X[:1]
        h = model.sample_hidden(x, 10_000, seed=1)[0][:, 0, 0]
        mu, var = model.layers[0].marginals(x)
        sigma = np.sqrt(var.value[0, 0])
        assert abs(h.mean() - mu.value[0, 0]) <= 3 * sigma / 100


class TestELBO:
    def test_single_layer_equals_svgp_elbo(self, rng):
        X, y = _data(rng)
        model = make_dgp(X, [], "regression", num_inducing=4, noise=0.2)
        _perturb_q(model, rng)
        a = float(dgp_elbo(model, X, y, 16, seed=0).value)
        b = float(svgp_elbo(model.layers[0], X, y, model.likelihood, 16).value)
        assert a == b

    def test_beta_zero_drops_kl(self, rng):
        X, y = _data(rng)
        model = make_dgp(X, [2], "regression", num_inducing=4, beta=0.0)
        _perturb_q(model, rng)
        full = float(model.objective(X, y, 8, np.random.default_rng(5)).value)
        fit = float(model.data_fit(X, y, np.random.default_rng(5)).value)
        assert full == fit

    def test_fixed_seed_reproducible(self, rng):
        X, y = _data(rng)
        model = make_dgp(X, [2], "regression", num_inducing=4)
        _perturb_q(model, rng)
        assert float(dgp_elbo(model, X, y, 8, seed=4).value) == float(dgp_elbo(model, X, y, 8, seed=4).value)

    @pytest.mark.parametrize("task", ["regression", "classification"])
    def test_gradient(self, rng, task):
        X, y = _data(rng, 6)
        if task == "classification":
            y = (y > 0).astype(int)
        model = make_dgp(X, [2], task, num_inducing=3, num_samples=3)
        _perturb_q(model, rng)
        check_grad(lambda: dgp_elbo(model, X, y, 6, seed=7), model.parameters())

    def test_mc_variance_scales_inverse_with_samples(self, rng):
        X, y = _data(rng, 10)
        model = make_dgp(X, [1], "regression", num_inducing=4)
        _perturb_q(model, rng, scale=0.8)
        spread = {}
        with dc.no_grad():
            for S in (1, 10):
                model.num_samples = S
                vals = [float(dgp_elbo(model, X, y, 10, seed=s).value) for s in range(100)]
                spread[S] = np.var(vals)
        assert 5 <= spread[1] / spread[10] <= 20


class TestPredict:
    def test_regression_mixture(self, rng):
        X, _ = _data(rng)
        model = make_dgp(X, [2], "regression", num_inducing=4, num_samples=7)
        _perturb_q(model, rng)
        pred = model.predict(X)
        assert isinstance(pred, GaussianMixture) and pred.means.shape == (8, 7)
        np.testing.assert_allclose(pred.weights, 1 / 7)
        np.testing.assert_allclose(pred.mean(), pred.means.mean(axis=1), rtol=1e-12)
        draws = pred.sample(np.random.default_rng(0), 1_000_000)
        # 1% of the predictive spread (means sit near zero, so a relative bound is meaningless)
        assert np.all(np.abs(draws.mean(axis=1) - pred.mean()) <= 0.01 * np.sqrt(pred.variance()))
        np.testing.assert_allclose(draws.var(axis=1), pred.variance(), rtol=0.01)

    def test_equal_logits_give_uniform(self, rng):
        X, _ = _data(rng)
        model = make_dgp(X, [2], "classification", num_classes=3, num_inducing=4)
        for layer in model.layers:
            layer.zero_variance = True
        pred = model.predict(X)
        assert isinstance(pred, Categorical)
        np.testing.assert_allclose(pred.probs, 1 / 3, atol=1e-12)

    def test_probabilities_normalized(self, rng):
        X, _ = _data(rng)
        model = make_dgp(X, [2], "classification", num_inducing=4)
        _perturb_q(model, rng)
        np.testing.assert_allclose(model.predict(X).probs.sum(axis=1), 1.0, atol=1e-12)

    def test_training_reduces_loss(self, rng):
        X = rng.uniform(-3, 3, (100, 1))
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(100)
        model = make_dgp(X, [1], "regression", num_inducing=10)
        opt = dc.Adam(model.parameters(), lr=0.05)
        r = np.random.default_rng(0)
        losses = [opt.step(model.loss(X, y, 100, r)) for _ in range(150)]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

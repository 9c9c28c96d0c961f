"""Deep sigma point processes: learnable quadrature in place of hidden-layer sampling.

One site index j fixes the whole path through the network, so the predictive
is a mixture of exactly Q components with weights softmax(rho).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import diffcore as dc
from .deepgp import LayeredGP, _row_chunks, build_layers
from .diffcore import Parameter, Tensor
from .likelihoods import LOG_2PI, GaussianLikelihood, SoftmaxLikelihood
from .predictive import Categorical, GaussianMixture


def gauss_hermite_rule(Q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and normalized weights integrating against a standard normal."""
    x, w = hermegauss(Q)
    return x, w / w.sum()


class DSPP(LayeredGP):
    """Sites are shared by all units of a layer; the weights are global.

    For classification the final layer is also evaluated at the sites (row
    ``len(hidden)`` of ``sites``) so that its uncertainty reaches the softmax.
    """

    def __init__(self, layers, likelihood, num_quadrature: int = 8, beta: float = 1.0):
        super().__init__(layers, likelihood, beta)
        if num_quadrature < 1:
            raise ValueError("need at least one quadrature site")
        self.num_quadrature = Q = num_quadrature
        nodes, weights = gauss_hermite_rule(Q)
        rows = len(self.hidden) + (0 if self.task == "regression" else 1)
        self.sites = Parameter(np.tile(nodes, (max(rows, 1), 1)), name="quadrature.sites")
        self.weight_logits = Parameter(np.log(weights), name="quadrature.logits")

    def parameters(self) -> list[Parameter]:
        return super().parameters() + [self.sites, self.weight_logits]

    def weights(self) -> np.ndarray:
        w = np.exp(self.weight_logits.value - self.weight_logits.value.max())
        return w / w.sum()

    def log_weights(self) -> Tensor:
        return dc.log_softmax(self.weight_logits)

    def components(self, X) -> tuple[Tensor, Tensor]:
        """Final-layer means and variances at each site, shaped (Q, N, H_out)."""
        X = np.asarray(X, dtype=np.float64)
        n, Q = len(X), self.num_quadrature
        F = dc.as_tensor(np.tile(X, (Q, 1)))
        for i, layer in enumerate(self.hidden):
            mean, var = layer.marginals(F)
            h = layer.width
            xi = dc.reshape(self.sites[i], (Q, 1, 1))
            F3 = dc.reshape(mean, (Q, n, h)) + xi * dc.reshape(dc.sqrt(var), (Q, n, h))
            F = dc.reshape(F3, (Q * n, h))
        mean, var = self.layers[-1].marginals(F)
        h = self.layers[-1].width
        return dc.reshape(mean, (Q, n, h)), dc.reshape(var, (Q, n, h))

    def component_logits(self, X) -> Tensor:
        """Classification logits at each site, (Q, N, C)."""
        mean, var = self.components(X)
        xi = dc.reshape(self.sites[len(self.hidden)], (-1, 1, 1))
        return mean + xi * dc.sqrt(var)

    def log_density(self, X, y) -> Tensor:
        """log sum_j w_j p_j(y | x) for each row, via log-sum-exp."""
        logw = dc.reshape(self.log_weights(), (-1, 1))
        if self.task == "regression":
            mean, var = self.components(X)
            y = np.asarray(y, dtype=np.float64).reshape(1, -1)
            m, v = mean[..., 0], var[..., 0] + self.likelihood.noise.read()
            comp = -0.5 * LOG_2PI - 0.5 * dc.log(v) - 0.5 * dc.square(y - m) / v
        else:
            comp = self.likelihood.log_prob(y, self.component_logits(X))
        return dc.logsumexp(logw + comp, axis=0)

    def data_fit(self, X, y, rng=None) -> Tensor:
        return dc.tsum(self.log_density(X, y))

    def objective(self, X, y, num_data: int, rng=None) -> Tensor:
        """Regularized maximum-likelihood objective; deterministic given the batch."""
        y = np.asarray(y)
        if len(y) == 0:
            raise ValueError("empty batch")
        out = self.data_fit(X, y) * (num_data / len(y))
        if self.beta != 0:
            out = out - self.beta * self.kl()
        return out

    def predict(self, X, num_samples=None, seed=None):
        """Q-component mixture (regression) or weighted softmax average (classification)."""
        X = np.asarray(X, dtype=np.float64)
        w = self.weights()
        means, variances, probs = [], [], []
        with dc.no_grad():
            for sl in _row_chunks(len(X)):
                if self.task == "regression":
                    mean, var = self.components(X[sl])
                    means.append(mean.value[..., 0].T)
                    variances.append(var.value[..., 0].T + float(self.likelihood.noise.get()))
                else:
                    f = self.component_logits(X[sl]).value
                    z = np.exp(f - f.max(-1, keepdims=True))
                    p = z / z.sum(-1, keepdims=True)
                    probs.append(np.tensordot(w, p, axes=(0, 0)))
        if self.task == "regression":
            return GaussianMixture(np.concatenate(means), np.concatenate(variances), w)
        p = np.concatenate(probs)
        return Categorical(p / p.sum(axis=1, keepdims=True))


def make_dspp(X, hidden: Sequence[int], task: str, num_classes: int = 2, num_inducing: int = 128,
              num_quadrature: int = 8, beta: float = 1.0, seed=0, ard: bool = False,
              noise: float = 0.1) -> DSPP:
    rng = np.random.default_rng(seed)
    out = 1 if task == "regression" else num_classes
    layers = build_layers(X, hidden, out, num_inducing, rng, ard=ard)
    lik = GaussianLikelihood(noise) if task == "regression" else SoftmaxLikelihood(num_classes)
    return DSPP(layers, lik, num_quadrature=num_quadrature, beta=beta)


def dspp_components(model: DSPP, X):
    """Per-site outputs and their weights: ((mean, var) or logits, weights)."""
    with dc.no_grad():
        if model.task == "regression":
            m, v = model.components(X)
            return (m.value, v.value), model.weights()
        return model.component_logits(X).value, model.weights()


def dspp_log_density(model: DSPP, X, y) -> np.ndarray:
    with dc.no_grad():
        return model.log_density(X, y).value


def dspp_objective(model: DSPP, X, y, num_data: int) -> Tensor:
    return model.objective(X, y, num_data)


def dspp_predict(model: DSPP, X):
    return model.predict(X)

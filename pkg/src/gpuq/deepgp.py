"""Deep GPs trained with doubly stochastic variational inference."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor
from .likelihoods import GaussianLikelihood, SoftmaxLikelihood
from .predictive import Categorical, GaussianMarginals, GaussianMixture
from .svgp import SVGPLayer

PREDICT_CHUNK = 1024


def _projection(X: np.ndarray, width: int) -> np.ndarray:
    """Fixed linear map from the layer input to ``width`` outputs.

    Identity when the sizes agree, the leading right-singular vectors of the
    data when shrinking, identity padded with zeros when growing.
    """
    d = X.shape[1]
    if d == width:
        return np.eye(d)
    if d > width:
        _, _, Vt = np.linalg.svd(X, full_matrices=False)
        return Vt[:width].T.copy()
    return np.concatenate([np.eye(d), np.zeros((d, width - d))], axis=1)


def build_layers(X, hidden: Sequence[int], output_dim: int, num_inducing: int,
                 rng: np.random.Generator, ard: bool = False) -> list[SVGPLayer]:
    """Stack of SVGP layers ``hidden + [output_dim]`` for inputs like ``X``.

    Inducing inputs start at a random subset of rows of X and are pushed
    through each hidden layer's linear mean so every layer's Z lives in the
    previous layer's output space.
    """
    X = np.asarray(X, dtype=np.float64)
    n, _ = X.shape
    if num_inducing <= n:
        Z = X[rng.choice(n, num_inducing, replace=False)]
    else:
        extra = X[rng.choice(n, num_inducing - n)] + 1e-2 * rng.standard_normal((num_inducing - n, X.shape[1]))
        Z = np.concatenate([X, extra])
    layers = []
    Xrun = X
    for i, width in enumerate(hidden):
        P = _projection(Xrun, width)
        d = Xrun.shape[1]
        layers.append(SVGPLayer(Z, width, mean=P, lengthscale=np.sqrt(d), ard=ard, name=f"layer{i}"))
        Z, Xrun = Z @ P, Xrun @ P
    d = Xrun.shape[1]
    layers.append(SVGPLayer(Z, output_dim, mean="constant", lengthscale=np.sqrt(d), ard=ard,
                            name=f"layer{len(hidden)}"))
    return layers


def _row_chunks(n: int, size: int = PREDICT_CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


class LayeredGP:
    """Shared plumbing for the DGP and DSPP models."""

    def __init__(self, layers: list[SVGPLayer], likelihood, beta: float = 1.0):
        if not layers:
            raise ValueError("need at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.input_dim != prev.width:
                raise ValueError("layer input dimension must equal the previous layer's width")
        if beta < 0:
            raise ValueError("beta must be non-negative")
        self.layers = layers
        self.likelihood = likelihood
        self.beta = beta

    @property
    def task(self) -> str:
        return "regression" if isinstance(self.likelihood, GaussianLikelihood) else "classification"

    @property
    def hidden(self) -> list[SVGPLayer]:
        return self.layers[:-1]

    def parameters(self) -> list[Parameter]:
        ps = [p for layer in self.layers for p in layer.parameters()]
        return ps + self.likelihood.parameters()

    def kl(self) -> Tensor:
        total = self.layers[0].kl()
        for layer in self.layers[1:]:
            total = total + layer.kl()
        return total

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value = np.asarray(state[p.name], dtype=np.float64).reshape(p.shape)

    def loss(self, X, y, num_data: int, rng: np.random.Generator) -> Tensor:
        """Negative objective per data point (what the optimizer minimizes)."""
        return self.objective(X, y, num_data, rng) * (-1.0 / num_data)


class DGP(LayeredGP):
    """Deep GP: hidden layers sampled by reparameterization, final layer analytic."""

    def __init__(self, layers, likelihood, num_samples: int = 10, beta: float = 1.0):
        super().__init__(layers, likelihood, beta)
        if num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        self.num_samples = num_samples

    def propagate(self, X, num_samples: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        """Final-layer marginal means and variances along each sampled path.

        Returns arrays shaped (S, N, H_out). Without hidden layers there is
        nothing to sample and S is 1 regardless of ``num_samples``.
        """
        X = np.asarray(X, dtype=np.float64)
        n = len(X)
        S = num_samples if self.hidden else 1
        F = dc.as_tensor(np.tile(X, (S, 1)) if S > 1 else X)
        for layer in self.hidden:
            mean, var = layer.marginals(F)
            eps = rng.standard_normal(mean.shape)
            F = mean + eps * dc.sqrt(var)
        mean, var = self.layers[-1].marginals(F)
        h = self.layers[-1].width
        return dc.reshape(mean, (S, n, h)), dc.reshape(var, (S, n, h))

    def sample_hidden(self, X, num_samples: int, seed=0) -> list[np.ndarray]:
        """Sampled outputs of every hidden layer, each (S, N, H_l)."""
        X = np.asarray(X, dtype=np.float64)
        rng = np.random.default_rng(seed)
        n, S = len(X), num_samples
        F, out = np.tile(X, (S, 1)), []
        with dc.no_grad():
            for layer in self.hidden:
                mean, var = layer.marginals(F)
                F = mean.value + rng.standard_normal(mean.shape) * np.sqrt(var.value)
                out.append(F.reshape(S, n, -1))
        return out

    def _sample_output(self, mean, var, num_samples: int, rng):
        """One draw of the final layer per path (S draws when there are no hidden layers)."""
        shape = (num_samples,) + tuple(mean.shape[1:])
        return mean + rng.standard_normal(shape) * (dc.sqrt(var) if isinstance(var, Tensor) else np.sqrt(var))

    def expected_log_lik(self, X, y, num_samples: int, rng) -> Tensor:
        """Monte Carlo estimate of the summed expected log-likelihood over the batch."""
        mean, var = self.propagate(X, num_samples, rng)
        if self.task == "regression":
            y = np.asarray(y, dtype=np.float64).reshape(1, -1, 1)
            S = mean.shape[0]
            return dc.tsum(self.likelihood.expected_log_prob(y, mean, var)) * (1.0 / S)
        f = self._sample_output(mean, var, num_samples, rng)
        return dc.tsum(self.likelihood.log_prob(y, f)) * (1.0 / num_samples)

    def data_fit(self, X, y, rng: np.random.Generator) -> Tensor:
        return self.expected_log_lik(X, y, self.num_samples, rng)

    def objective(self, X, y, num_data: int, rng: np.random.Generator) -> Tensor:
        """Mini-batch ELBO estimate (to maximize)."""
        y = np.asarray(y)
        if len(y) == 0:
            raise ValueError("empty batch")
        out = self.data_fit(X, y, rng) * (num_data / len(y))
        if self.beta != 0:
            out = out - self.beta * self.kl()
        return out

    def forward_samples(self, X, num_samples: int | None = None, seed=0) -> list[GaussianMarginals]:
        S = num_samples or self.num_samples
        rng = np.random.default_rng(seed)
        with dc.no_grad():
            mean, var = self.propagate(X, S, rng)
        mean, var = np.broadcast_to(mean.value, (S,) + mean.shape[1:]), np.broadcast_to(var.value, (S,) + var.shape[1:])
        return [GaussianMarginals(mean[s], var[s]) for s in range(S)]

    def predict(self, X, num_samples: int | None = None, seed=0):
        """Uniform mixture over sampled paths (regression) or averaged softmax (classification)."""
        S = num_samples or self.num_samples
        X = np.asarray(X, dtype=np.float64)
        rng = np.random.default_rng(seed)
        means, variances, probs = [], [], []
        with dc.no_grad():
            for sl in _row_chunks(len(X)):
                mean, var = self.propagate(X[sl], S, rng)
                mean, var = mean.value, var.value
                if self.task == "regression":
                    means.append(mean[..., 0].T)
                    variances.append(var[..., 0].T + float(self.likelihood.noise.get()))
                else:
                    f = self._sample_output(mean, var, S, rng)
                    probs.append(_softmax(f).mean(axis=0))
        if self.task == "regression":
            k = means[0].shape[1]
            return GaussianMixture(np.concatenate(means), np.concatenate(variances), np.full(k, 1.0 / k))
        p = np.concatenate(probs)
        return Categorical(p / p.sum(axis=1, keepdims=True))


def _softmax(f: np.ndarray) -> np.ndarray:
    z = np.exp(f - f.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def make_dgp(X, hidden: Sequence[int], task: str, num_classes: int = 2, num_inducing: int = 128,
             num_samples: int = 10, beta: float = 1.0, seed=0, ard: bool = False, noise: float = 0.1) -> DGP:
    rng = np.random.default_rng(seed)
    out = 1 if task == "regression" else num_classes
    layers = build_layers(X, hidden, out, num_inducing, rng, ard=ard)
    lik = GaussianLikelihood(noise) if task == "regression" else SoftmaxLikelihood(num_classes)
    return DGP(layers, lik, num_samples=num_samples, beta=beta)


def dgp_forward_samples(model: DGP, X, num_samples: int, seed=0) -> list[GaussianMarginals]:
    return model.forward_samples(X, num_samples, seed)


def dgp_elbo(model: DGP, X, y, num_data: int, seed=0) -> Tensor:
    return model.objective(X, y, num_data, np.random.default_rng(seed))


def dgp_predict(model: DGP, X, num_samples: int | None = None, seed=0):
    return model.predict(X, num_samples, seed)

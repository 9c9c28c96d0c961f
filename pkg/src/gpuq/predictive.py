"""Predictive distribution containers returned by every model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2 * np.pi))


def _gauss_logpdf(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - mean) ** 2 / var


@dataclass
class GaussianMarginals:
    """Independent Gaussian marginals, one per row (and per output column if 2-D)."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and variance shapes differ")

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean, self.var

    def log_prob(self, y) -> np.ndarray:
        return _gauss_logpdf(np.asarray(y, dtype=np.float64), self.mean, self.var)

    def affine(self, shift: float, scale: float) -> "GaussianMarginals":
        return GaussianMarginals(self.mean * scale + shift, self.var * scale**2)


@dataclass
class GaussianMixture:
    """Per-row mixture of K Gaussians.

    ``means``/``variances`` are (N, K); ``weights`` is (K,) shared by all rows or
    (N, K) per row. Rows of ``weights`` sum to one.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.means.shape != self.variances.shape:
            raise ValueError("component means and variances differ in shape")
        if self.weights.shape[-1] != self.means.shape[1]:
            raise ValueError("weights do not match the number of components")

    @property
    def n_components(self) -> int:
        return self.means.shape[1]

    def _w(self) -> np.ndarray:
        return np.broadcast_to(self.weights, self.means.shape)

    def mean(self) -> np.ndarray:
        return np.sum(self._w() * self.means, axis=1)

    def variance(self) -> np.ndarray:
        mu = self.mean()
        v = np.sum(self._w() * (self.variances + self.means**2), axis=1) - mu**2
        return np.maximum(v, 0.0)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean(), self.variance()

    def log_prob(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        with np.errstate(divide="ignore"):
            logw = np.log(self._w())
        return logsumexp(logw + _gauss_logpdf(y, self.means, self.variances), axis=1)

    def affine(self, shift: float, scale: float) -> "GaussianMixture":
        return GaussianMixture(self.means * scale + shift, self.variances * scale**2, self.weights)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` draws for every row, shape (N, size)."""
        n, k = self.means.shape
        w = self._w()
        u = rng.random((n, size))
        comp = (u[..., None] > np.cumsum(w, axis=1)[:, None, :]).sum(-1)
        comp = np.minimum(comp, k - 1)
        mu = np.take_along_axis(self.means, comp, axis=1)
        sd = np.sqrt(np.take_along_axis(self.variances, comp, axis=1))
        return mu + sd * rng.standard_normal((n, size))


@dataclass
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)

    def log_prob(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=int)
        p = self.probs[np.arange(len(labels)), labels]
        return np.log(np.maximum(p, 1e-300))

    def predicted_class(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


PredictiveDistribution = GaussianMarginals | GaussianMixture | Categorical

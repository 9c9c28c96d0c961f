"""RBF kernel, exact GP regression and the Gaussian KL divergence."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor, as_tensor
from .predictive import GaussianMarginals

LOG_2PI = float(np.log(2 * np.pi))


def scaled_sqdist(A: Tensor, B: Tensor | None = None) -> Tensor:
    """Pairwise squared distances over the last axis, batched over leading axes.

    With ``B`` omitted the result is symmetrized so it equals its transpose
    exactly.
    """
    A = as_tensor(A)
    same = B is None
    B = A if same else as_tensor(B)
    a2 = dc.tsum(dc.square(A), axis=-1)
    b2 = dc.tsum(dc.square(B), axis=-1)
    cross = dc.matmul(A, dc.transpose(B))
    d = dc.expand_dims(a2, -1) + dc.expand_dims(b2, -2) - 2.0 * cross
    if same:
        d = 0.5 * (d + dc.transpose(d))
    return dc.clip_min(d, 0.0)


def rbf_kernel(X, X2=None, lengthscale=1.0, outputscale=1.0) -> Tensor:
    """outputscale * exp(-|x - x'|^2 / (2 lengthscale^2)).

    ``lengthscale`` may be a scalar or a length-D vector (ARD). Arguments may be
    arrays or graph tensors; the outputscale multiplies unsquared.
    """
    X = as_tensor(X)
    if X.ndim != 2:
        raise ValueError("X must be 2-D (N x D)")
    if X2 is not None:
        X2 = as_tensor(X2)
        if X2.ndim != 2 or X2.shape[1] != X.shape[1]:
            raise ValueError(f"feature dimension mismatch: {X.shape} vs {X2.shape}")
    ls = as_tensor(lengthscale)
    if ls.value.size not in (1, X.shape[1]):
        raise ValueError("lengthscale must be scalar or one per feature")
    ls = dc.reshape(ls, (1, -1))
    Xs = X / ls
    d = scaled_sqdist(Xs, None if X2 is None else X2 / ls)
    return as_tensor(outputscale) * dc.exp(-0.5 * d)


class RBFKernel:
    """Learnable RBF kernel parameters (log-parameterized)."""

    def __init__(self, input_dim: int, lengthscale: float = 1.0, outputscale: float = 1.0, ard: bool = False):
        self.input_dim = input_dim
        self.ard = ard
        n = input_dim if ard else 1
        self.lengthscale = Parameter(np.full(n, float(lengthscale)), positive=True, name="lengthscale")
        self.outputscale = Parameter(float(outputscale), positive=True, name="outputscale")

    def parameters(self) -> list[Parameter]:
        return [self.lengthscale, self.outputscale]

    def __call__(self, X, X2=None) -> Tensor:
        return rbf_kernel(X, X2, self.lengthscale.read(), self.outputscale.read())


class ExactGP:
    """GP regression with constant mean, RBF kernel and Gaussian noise.

    ``noise`` holds the observation noise variance sigma_y^2.
    """

    def __init__(self, X, y, kernel: RBFKernel | None = None, noise: float = 0.1,
                 mean: float | None = None, ard: bool = False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=np.float64).ravel()
        if len(X) < 1 or len(X) != len(y):
            raise ValueError("need at least one training point and matching X/y lengths")
        self.X, self.y = X, y
        self.kernel = kernel or RBFKernel(X.shape[1], ard=ard)
        self.noise = Parameter(noise, positive=True, name="noise")
        self.mean_const = Parameter(float(np.mean(y)) if mean is None else float(mean), name="mean")

    def parameters(self) -> list[Parameter]:
        return self.kernel.parameters() + [self.noise, self.mean_const]

    def _train_cov(self) -> Tensor:
        K = self.kernel(self.X)
        n = len(self.X)
        return K + self.noise.read() * np.eye(n)

    def log_marginal_likelihood(self) -> Tensor:
        n = len(self.y)
        L = dc.cholesky(self._train_cov())
        r = dc.reshape(self.y - self.mean_const, (n, 1))
        alpha = dc.solve_triangular(L, r)
        logdet = 2.0 * dc.tsum(dc.log(dc.diagonal(L)))
        return -0.5 * dc.tsum(dc.square(alpha)) - 0.5 * logdet - 0.5 * n * LOG_2PI

    def fit(self, steps: int = 200, lr: float = 0.05) -> list[float]:
        opt = dc.Adam(self.parameters(), lr=lr)
        n = len(self.y)
        trace = []
        for _ in range(steps):
            loss = -self.log_marginal_likelihood() * (1.0 / n)
            trace.append(opt.step(loss))
        return trace

    def posterior(self, Xq, include_noise: bool = False) -> GaussianMarginals:
        with dc.no_grad():
            Xq = np.asarray(Xq, dtype=np.float64)
            if Xq.ndim == 1:
                Xq = Xq[:, None]
            L = dc.cholesky(self._train_cov()).value
            Kxq = self.kernel(self.X, Xq).value
            c = float(self.mean_const.value)
            A = dc._trisolve(L, Kxq)
            alpha = dc._trisolve(L, (self.y - c)[:, None])
            mean = c + (A.T @ alpha).ravel()
            prior = float(self.kernel.outputscale.get())
            var = np.maximum(prior - np.sum(A * A, axis=0), 1e-12)
            if include_noise:
                var = var + float(self.noise.get())
        return GaussianMarginals(mean, var)


def log_marginal_likelihood(model: ExactGP) -> Tensor:
    return model.log_marginal_likelihood()


def exact_posterior(model: ExactGP, Xq, include_noise: bool = False) -> GaussianMarginals:
    return model.posterior(Xq, include_noise=include_noise)


def gaussian_kl(m, L_S, m0, K0) -> Tensor:
    """KL( N(m, L_S L_S^T) || N(m0, K0) ), batched over leading axes of the matrices."""
    m, L_S, m0, K0 = (as_tensor(t) for t in (m, L_S, m0, K0))
    M = L_S.shape[-1]
    L0 = dc.cholesky(K0)
    A = dc.solve_triangular(L0, L_S)
    d = dc.expand_dims(m - m0, -1)
    b = dc.solve_triangular(L0, d)
    trace = dc.tsum(dc.square(A), axis=(-2, -1))
    maha = dc.tsum(dc.square(b), axis=(-2, -1))
    logdet0 = 2.0 * dc.tsum(dc.log(dc.diagonal(L0)), axis=-1)
    logdetS = dc.tsum(dc.log(dc.square(dc.diagonal(L_S))), axis=-1)
    return 0.5 * (trace + maha - M + logdet0 - logdetS)


def whitened_kl(m, L_S) -> Tensor:
    """KL( N(m, L_S L_S^T) || N(0, I) ); m is (..., M), L_S is (..., M, M)."""
    m, L_S = as_tensor(m), as_tensor(L_S)
    M = L_S.shape[-1]
    trace = dc.tsum(dc.square(L_S), axis=(-2, -1))
    maha = dc.tsum(dc.square(m), axis=-1)
    logdetS = dc.tsum(dc.log(dc.square(dc.diagonal(L_S))), axis=-1)
    return 0.5 * (trace + maha - M - logdetS)

"""Sparse variational GP layer of width H (whitened inducing-point form).

Every unit in the layer has its own inducing inputs, variational mean and
Cholesky factor, and RBF hyperparameters. All units are evaluated together as
a batch of H independent GPs.
"""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor, as_tensor
from .kernels import scaled_sqdist, whitened_kl
from .likelihoods import GaussianLikelihood
from .predictive import GaussianMarginals

KZZ_JITTER = 1e-6
MIN_VARIANCE = 1e-10


class SVGPLayer:
    """H independent sparse GPs sharing one input space.

    Parameters
    ----------
    Z : array (M, D_in) or (H, M, D_in)
        Initial inducing inputs (copied to every unit if 2-D).
    width : int
        Number of GP units H.
    mean : "zero", "constant" or an array (D_in, H)
        Mean function. An array is a fixed linear projection of the input.
    """

    def __init__(self, Z, width: int = 1, mean="zero", lengthscale: float = 1.0,
                 outputscale: float = 1.0, ard: bool = False, q_sqrt_scale: float = 1e-3,
                 name: str = "layer"):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 2:
            Z = np.broadcast_to(Z, (width,) + Z.shape)
        H, M, D = Z.shape
        if H != width or M < 1 or width < 1:
            raise ValueError("inducing inputs do not match layer width")
        self.width, self.num_inducing, self.input_dim = H, M, D
        self.name = name
        self.Z = Parameter(Z.copy(), name=f"{name}.Z")
        self.lengthscale = Parameter(np.full((H, 1, D if ard else 1), float(lengthscale)),
                                     positive=True, name=f"{name}.lengthscale")
        self.outputscale = Parameter(np.full(H, float(outputscale)), positive=True, name=f"{name}.outputscale")
        self.q_mu = Parameter(np.zeros((H, M)), name=f"{name}.q_mu")
        self.q_offdiag = Parameter(np.zeros((H, M, M)), name=f"{name}.q_offdiag")
        self.q_logdiag = Parameter(np.full((H, M), np.log(q_sqrt_scale)), name=f"{name}.q_logdiag")
        self._tril = np.tril(np.ones((M, M)), -1)
        # diagnostic switch: report exactly zero predictive variance
        self.zero_variance = False
        self.mean_kind = mean if isinstance(mean, str) else "linear"
        if self.mean_kind == "constant":
            self.mean_const = Parameter(np.zeros(H), name=f"{name}.mean")
        elif self.mean_kind == "linear":
            P = np.asarray(mean, dtype=np.float64)
            if P.shape != (D, H):
                raise ValueError(f"mean projection must be {(D, H)}, got {P.shape}")
            self.mean_proj = P
        elif self.mean_kind != "zero":
            raise ValueError(f"unknown mean function {mean!r}")

    def parameters(self) -> list[Parameter]:
        ps = [self.Z, self.lengthscale, self.outputscale, self.q_mu, self.q_offdiag, self.q_logdiag]
        if self.mean_kind == "constant":
            ps.append(self.mean_const)
        return ps

    # -- variational state ------------------------------------------------
    def q_sqrt(self) -> Tensor:
        diag = dc.exp(self.q_logdiag)
        eye = np.eye(self.num_inducing)
        return self.q_offdiag * self._tril + dc.expand_dims(diag, -1) * eye

    def set_q(self, q_mu=None, q_sqrt=None) -> None:
        """Set the whitened variational state directly (q_sqrt lower-triangular, positive diagonal)."""
        if q_mu is not None:
            self.q_mu.set(np.broadcast_to(q_mu, self.q_mu.shape))
        if q_sqrt is not None:
            L = np.broadcast_to(np.asarray(q_sqrt, dtype=np.float64), self.q_offdiag.shape)
            d = np.diagonal(L, axis1=-2, axis2=-1)
            if np.any(d <= 0):
                raise ValueError("q_sqrt needs a positive diagonal")
            self.q_offdiag.set(L * self._tril)
            self.q_logdiag.set(np.log(d))

    def kl(self) -> Tensor:
        """Sum over units of KL(q(v) || N(0, I)) in whitened coordinates."""
        return dc.tsum(whitened_kl(self.q_mu, self.q_sqrt()))

    # -- prediction -------------------------------------------------------
    def _mean_fn(self, X: Tensor) -> Tensor | None:
        if self.mean_kind == "zero":
            return None
        if self.mean_kind == "constant":
            return dc.reshape(self.mean_const, (1, -1))
        return dc.matmul(X, self.mean_proj)

    def marginals(self, X) -> tuple[Tensor, Tensor]:
        """Predictive means and variances of q(f(X)), each (N, H)."""
        X = as_tensor(X)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs (N, {self.input_dim}), got {X.shape}")
        ls = self.lengthscale.read()
        sf = self.outputscale.read()
        Zs = self.Z / ls
        Xs = dc.expand_dims(X, 0) / ls
        sf3 = dc.reshape(sf, (-1, 1, 1))
        Kzz = sf3 * dc.exp(-0.5 * scaled_sqdist(Zs)) + KZZ_JITTER * np.eye(self.num_inducing)
        Kzx = sf3 * dc.exp(-0.5 * scaled_sqdist(Zs, Xs))
        Lz = dc.cholesky(Kzz)
        A = dc.solve_triangular(Lz, Kzx)                         # (H, M, N)
        mean = dc.tsum(dc.expand_dims(self.q_mu, -1) * A, axis=1)  # (H, N)
        LtA = dc.matmul(dc.transpose(self.q_sqrt()), A)
        var = (dc.reshape(sf, (-1, 1)) - dc.tsum(dc.square(A), axis=1)
               + dc.tsum(dc.square(LtA), axis=1))
        var = dc.clip_min(var, MIN_VARIANCE)
        if self.zero_variance:
            var = dc.Tensor(np.zeros(var.shape))
        mean, var = dc.transpose(mean), dc.transpose(var)
        mf = self._mean_fn(X)
        if mf is not None:
            mean = mean + mf
        return mean, var

    def predict(self, X) -> GaussianMarginals:
        with dc.no_grad():
            m, v = self.marginals(np.asarray(X, dtype=np.float64))
        return GaussianMarginals(m.value, v.value)


def svgp_marginals(layer: SVGPLayer, X) -> GaussianMarginals:
    return layer.predict(X)


def svgp_elbo(layer: SVGPLayer, X, y, likelihood: GaussianLikelihood, num_data: int,
              beta: float = 1.0) -> Tensor:
    """Mini-batch SVGP ELBO for a width-1 regression layer.

    The expected log-likelihood is scaled by num_data / batch size.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        raise ValueError("empty batch")
    mean, var = layer.marginals(X)
    ell = dc.tsum(likelihood.expected_log_prob(y[:, None], mean, var))
    out = ell * (num_data / len(y))
    if beta != 0:
        out = out - beta * layer.kl()
    return out

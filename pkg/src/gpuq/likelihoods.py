"""Observation models: Gaussian for regression, softmax for classification."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor, as_tensor

LOG_2PI = float(np.log(2 * np.pi))
PROB_FLOOR = 1e-300


def gaussian_log_prob(y, mean, var):
    """Elementwise log N(y | mean, var). Accepts arrays or graph tensors."""
    v = var.value if isinstance(var, Tensor) else np.asarray(var)
    if np.any(v <= 0):
        raise ValueError("variance must be positive")
    if isinstance(y, Tensor) or isinstance(mean, Tensor) or isinstance(var, Tensor):
        var = as_tensor(var)
        r = as_tensor(y) - mean
        return -0.5 * LOG_2PI - 0.5 * dc.log(var) - 0.5 * dc.square(r) / var
    y, mean = np.asarray(y, dtype=np.float64), np.asarray(mean, dtype=np.float64)
    return -0.5 * (LOG_2PI + np.log(v)) - 0.5 * (y - mean) ** 2 / v


def softmax_probs(f, W=None) -> np.ndarray:
    """Softmax(W f) over the last axis; W defaults to the identity."""
    f = np.asarray(f, dtype=np.float64)
    if W is not None:
        W = np.asarray(W, dtype=np.float64)
        if W.shape[0] != f.shape[-1]:
            raise ValueError(f"mixing matrix {W.shape} incompatible with {f.shape[-1]} latents")
        f = f @ W
    z = f - np.max(f, axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.maximum(p, PROB_FLOOR)


class GaussianLikelihood:
    """p(y | f) = N(y | f, noise); ``noise`` is the variance sigma_y^2."""

    kind = "gaussian"

    def __init__(self, noise: float = 0.1):
        self.noise = Parameter(noise, positive=True, name="likelihood.noise")

    def parameters(self) -> list[Parameter]:
        return [self.noise]

    def expected_log_prob(self, y, mean: Tensor, var: Tensor) -> Tensor:
        """E_{N(f | mean, var)}[log N(y | f, noise)], elementwise."""
        noise = self.noise.read()
        r = as_tensor(y) - mean
        return -0.5 * LOG_2PI - 0.5 * dc.log(noise) - 0.5 * (dc.square(r) + var) / noise


class SoftmaxLikelihood:
    """p(y | f) = Softmax(W f) with W fixed to the identity."""

    kind = "softmax"

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.W = np.eye(num_classes)
        self.identity = True

    def parameters(self) -> list[Parameter]:
        return []

    def log_prob(self, labels, logits: Tensor) -> Tensor:
        """log p(label | logits) per row; logits (..., N, C), labels (N,)."""
        labels = np.asarray(labels, dtype=int)
        onehot = np.eye(self.num_classes)[labels]
        return dc.tsum(dc.log_softmax(logits) * onehot, axis=-1)

"""Deep-ensemble baseline built from dual-output ReLU MLPs."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor
from .likelihoods import LOG_2PI
from .predictive import Categorical, GaussianMarginals

MIN_VARIANCE = 1e-6


class MLPMember:
    """ReLU MLP emitting a mean and a positive variance for each output.

    Regression has one output (mu, sigma^2). Classification has one logit
    mean and one logit variance per class.
    """

    def __init__(self, input_dim: int, hidden: Sequence[int], num_outputs: int = 1, seed=0,
                 name: str = "member"):
        rng = np.random.default_rng(seed)
        self.num_outputs = num_outputs
        sizes = [input_dim, *hidden, 2 * num_outputs]
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), name=f"{name}.W{i}"))
            self.biases.append(Parameter(rng.uniform(-bound, bound, fan_out), name=f"{name}.b{i}"))

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X) -> tuple[Tensor, Tensor]:
        h = dc.as_tensor(np.asarray(X, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = dc.relu(h)
        k = self.num_outputs
        mean = h[:, :k]
        var = dc.softplus(h[:, k:]) + MIN_VARIANCE
        return mean, var


def member_regression_loss(member: MLPMember, X, y) -> Tensor:
    """Summed Gaussian negative log-likelihood over the batch."""
    mean, var = member.forward(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    return dc.tsum(0.5 * (LOG_2PI + dc.log(var)) + 0.5 * dc.square(y - mean) / var)


def member_classification_loss(member: MLPMember, X, labels) -> Tensor:
    """Summed cross entropy of softmax(mean logits); the variance head is not used."""
    mean, _ = member.forward(X)
    labels = np.asarray(labels, dtype=int)
    onehot = np.eye(member.num_outputs)[labels]
    return -dc.tsum(dc.log_softmax(mean) * onehot)


def aggregate_regression(means, variances) -> tuple[np.ndarray, np.ndarray]:
    """Moment-match an equal-weight mixture; inputs are (K, N) or (K,)."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    mu = means.mean(axis=0)
    var = np.mean(variances + means**2, axis=0) - mu**2
    return mu, np.maximum(var, 0.0)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def classify_from_logits(means, variances, samples_per_member: int, rng) -> np.ndarray:
    """Average softmax over Gaussian logit draws; means/variances are (K, N, C)."""
    means = np.asarray(means, dtype=np.float64)
    sd = np.sqrt(np.asarray(variances, dtype=np.float64))
    acc = np.zeros(means.shape[1:])
    for k in range(means.shape[0]):
        z = means[k] + sd[k] * rng.standard_normal((samples_per_member,) + means.shape[1:])
        acc += _softmax(z).mean(axis=0)
    p = acc / means.shape[0]
    return p / p.sum(axis=-1, keepdims=True)


class DeepEnsemble:
    """K independently initialized members.

    Members have disjoint parameters, so optimizing the mean of their losses
    with one elementwise Adam trains each of them independently.
    """

    def __init__(self, input_dim: int, hidden: Sequence[int], num_models: int = 5, task: str = "regression",
                 num_classes: int = 2, seed=0, samples_per_member: int = 100):
        if num_models < 2:
            raise ValueError("an ensemble needs at least two members")
        self.task = task
        self.num_classes = num_classes
        self.samples_per_member = samples_per_member
        outs = 1 if task == "regression" else num_classes
        seeds = np.random.SeedSequence(seed).spawn(num_models)
        self.members = [MLPMember(input_dim, hidden, outs, seed=s, name=f"member{k}")
                        for k, s in enumerate(seeds)]

    def parameters(self) -> list[Parameter]:
        return [p for m in self.members for p in m.parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state) -> None:
        for p in self.parameters():
            p.value = np.asarray(state[p.name], dtype=np.float64).reshape(p.shape)

    def member_loss(self, member, X, y) -> Tensor:
        if self.task == "regression":
            return member_regression_loss(member, X, y)
        return member_classification_loss(member, X, y)

    beta = 0.0

    def kl(self) -> Tensor:
        return dc.as_tensor(0.0)

    def data_fit(self, X, y, rng=None) -> Tensor:
        """Minus the summed task loss, averaged over members."""
        total = self.member_loss(self.members[0], X, y)
        for m in self.members[1:]:
            total = total + self.member_loss(m, X, y)
        return total * (-1.0 / len(self.members))

    def loss(self, X, y, num_data=None, rng=None) -> Tensor:
        """Mean per-point task loss averaged over members."""
        return self.data_fit(X, y) * (-1.0 / len(y))

    def member_outputs(self, X) -> tuple[np.ndarray, np.ndarray]:
        with dc.no_grad():
            outs = [m.forward(X) for m in self.members]
        return np.stack([o[0].value for o in outs]), np.stack([o[1].value for o in outs])

    def predict(self, X, num_samples=None, seed=0):
        means, variances = self.member_outputs(np.asarray(X, dtype=np.float64))
        if self.task == "regression":
            mu, var = aggregate_regression(means[..., 0], variances[..., 0])
            return GaussianMarginals(mu, np.maximum(var, MIN_VARIANCE))
        S = num_samples or self.samples_per_member
        return Categorical(classify_from_logits(means, variances, S, np.random.default_rng(seed)))


def ensemble_classify(ensemble: DeepEnsemble, X, samples_per_member: int = 100, seed=0) -> np.ndarray:
    return ensemble.predict(X, samples_per_member, seed).probs

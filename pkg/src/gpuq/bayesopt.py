"""Bayesian optimization with Sobol initialization and expected improvement.

Objectives are minimized. The surrogate is an exact GP with an ARD RBF kernel
over an encoded unit hypercube: continuous and integer dimensions map to
[0, 1] (log-scaled ones in log space) and categorical dimensions become
one-hot blocks.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .errors import GpuqError
from .kernels import ExactGP, RBFKernel


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log scale needs lo > 0")

    width = 1

    def from_unit(self, u: float):
        if self.log:
            return float(math.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo))))
        return float(self.lo + u * (self.hi - self.lo))

    def encode(self, v) -> list[float]:
        if self.log:
            return [(math.log(v) - math.log(self.lo)) / (math.log(self.hi) - math.log(self.lo))]
        return [(v - self.lo) / (self.hi - self.lo)]


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")

    width = 1

    def from_unit(self, u: float):
        return int(round(self.lo + u * (self.hi - self.lo)))

    def encode(self, v) -> list[float]:
        return [(v - self.lo) / (self.hi - self.lo)]


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        if len(self.choices) < 1:
            raise ValueError(f"{self.name}: empty choice set")

    @property
    def width(self) -> int:
        return len(self.choices)

    def from_unit(self, u: float):
        return self.choices[min(int(u * len(self.choices)), len(self.choices) - 1)]

    def encode(self, v) -> list[float]:
        # scaled one-hot: any two distinct choices are at distance 1
        out = [0.0] * len(self.choices)
        out[self.choices.index(v)] = 1.0 / math.sqrt(2.0)
        return out


class SearchSpace:
    def __init__(self, dims: Sequence[Continuous | Integer | Categorical]):
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate hyperparameter names")
        self.dims = list(dims)

    def __len__(self) -> int:
        return len(self.dims)

    def from_unit(self, u) -> dict[str, Any]:
        return {d.name: d.from_unit(float(x)) for d, x in zip(self.dims, u)}

    def encode(self, config: dict) -> np.ndarray:
        return np.array([x for d in self.dims for x in d.encode(config[d.name])])


@dataclass
class TrialRecord:
    index: int
    config: dict
    value: float | None
    status: str
    seed: int
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class TuneResult:
    best: TrialRecord
    history: list[TrialRecord] = field(default_factory=list)

    def incumbents(self) -> list[float]:
        out, best = [], math.inf
        for t in self.history:
            if t.status == "ok":
                best = min(best, t.value)
            out.append(best)
        return out

    def to_jsonl(self) -> str:
        return "".join(t.to_json() + "\n" for t in self.history)


def sobol_unit(n: int, d: int, seed: int | None = None) -> np.ndarray:
    """n points of a d-dimensional Sobol sequence in [0, 1).

    Without a seed the plain sequence is returned with its leading origin
    skipped (0.5, 0.75, 0.25, ... in the first coordinate); with a seed the
    sequence is Owen-scrambled.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = qmc.Sobol(d, scramble=seed is not None, seed=seed)
    if seed is None:
        gen.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return gen.random(n)


def sobol_points(space: SearchSpace, n: int, seed: int | None = None) -> list[dict]:
    return [space.from_unit(u) for u in sobol_unit(n, len(space), seed)]


def expected_improvement(mu, sigma, best) -> np.ndarray:
    """Closed-form EI for minimization; EI = max(best - mu, 0) where sigma == 0."""
    mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    imp = best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = imp / sigma
        ei = imp * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(imp, 0.0))


def fit_surrogate(X: np.ndarray, y: np.ndarray, steps: int = 100, lr: float = 0.1) -> ExactGP:
    """Exact GP on standardized objective values, hyperparameters refit from scratch."""
    kernel = RBFKernel(X.shape[1], lengthscale=0.3, outputscale=1.0, ard=True)
    gp = ExactGP(X, y, kernel=kernel, noise=1e-2, mean=0.0)
    if len(y) > 1:
        gp.fit(steps=steps, lr=lr)
    return gp


def tune(objective: Callable[[dict], float], space: SearchSpace, trials: int = 20, init: int = 5,
         seed: int = 0, n_candidates: int = 1024, xi: float = 0.01,
         callback: Callable[[TrialRecord], None] | None = None) -> TuneResult:
    """Minimize ``objective`` over ``space``.

    Trials whose objective raises or returns a non-finite value are recorded
    as failed and left out of the surrogate.
    """
    if not trials >= init >= 1:
        raise ValueError("need trials >= init >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(trials + 1)
    init_configs = sobol_points(space, init, seed=int(seeds[-1]))
    history: list[TrialRecord] = []

    for i in range(trials):
        ok = [t for t in history if t.status == "ok"]
        if i < init or not ok:
            config = init_configs[i] if i < init else sobol_points(space, 1, seed=int(seeds[i]))[0]
        else:
            config = _propose(space, ok, n_candidates, xi, int(seeds[i]))
        t0 = time.perf_counter()
        try:
            value = float(objective(config))
            status = "ok" if math.isfinite(value) else "failed"
        except (GpuqError, ArithmeticError, np.linalg.LinAlgError):
            value, status = None, "failed"
        if status == "failed":
            value = None
        rec = TrialRecord(i, config, value, status, int(seeds[i]), time.perf_counter() - t0)
        history.append(rec)
        if callback:
            callback(rec)

    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise GpuqError("no successful trials")
    best = min(ok, key=lambda t: t.value)
    return TuneResult(best, history)


def _propose(space: SearchSpace, ok: list[TrialRecord], n_candidates: int, xi: float, seed: int) -> dict:
    X = np.stack([space.encode(t.config) for t in ok])
    y = np.array([t.value for t in ok])
    mu_y, sd_y = y.mean(), y.std()
    ys = (y - mu_y) / (sd_y if sd_y > 0 else 1.0)
    gp = fit_surrogate(X, ys)
    cands = sobol_points(space, n_candidates, seed=seed)
    Xc = np.stack([space.encode(c) for c in cands])
    post = gp.posterior(Xc)
    ei = expected_improvement(post.mean, np.sqrt(post.var), ys.min() - xi)
    return cands[int(np.argmax(ei))]

"""Feature-level distribution shifts parameterized by a severity in [0, 1]."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

KINDS = ("gaussian_noise", "feature_masking", "feature_scaling", "feature_permutation", "outlier_injection")
SEVERITIES = (0.0, 0.1, 0.2, 0.4, 0.6, 0.8)
OUTLIER_SCALE = 3.0


def severity_schedule() -> tuple[float, ...]:
    return SEVERITIES


@dataclass
class PerturbationSpec:
    kind: str
    severity: float
    seed: int = 0
    feature_std: list[float] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        if self.feature_std is not None and np.any(np.asarray(self.feature_std) < 0):
            raise ValueError("feature stds must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["feature_std"] is not None:
            d["feature_std"] = [float(v) for v in d["feature_std"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        unknown = set(d) - {"kind", "severity", "seed", "feature_std"}
        if unknown:
            raise ValueError(f"unknown perturbation keys: {sorted(unknown)}")
        return cls(**d)


def perturb(X, spec: PerturbationSpec) -> np.ndarray:
    """Return a perturbed copy of X; the input is never modified."""
    X = np.asarray(X, dtype=np.float64)
    s = spec.severity
    out = X.copy()
    if s == 0.0:
        return out
    n, d = X.shape
    std = np.ones(d) if spec.feature_std is None else np.asarray(spec.feature_std, dtype=np.float64)
    if std.shape != (d,):
        raise ValueError(f"need {d} feature stds, got {std.shape}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_noise":
        out += rng.standard_normal((n, d)) * (std * s)
    elif spec.kind == "feature_masking":
        out[rng.random((n, d)) < s] = 0.0
    elif spec.kind == "feature_scaling":
        out *= 1.0 + s
    elif spec.kind == "feature_permutation":
        for j in range(d):
            rows = np.flatnonzero(rng.random(n) < s)
            # shuffle only among the selected cells so the column multiset is kept exactly
            out[rows, j] = X[rng.permutation(rows), j]
    elif spec.kind == "outlier_injection":
        hit = rng.random((n, d)) < s
        sign = np.where(rng.random((n, d)) < 0.5, -1.0, 1.0)
        out += hit * sign * OUTLIER_SCALE * std
    return out

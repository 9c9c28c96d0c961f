"""Dataset ingestion, seeded splits and train-only standardization."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import IngestionError

CASP_ROWS, CASP_FEATURES = 45_730, 9
ESR_ROWS, ESR_FEATURES = 11_500, 178
TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


def index_hash(idx: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(idx, dtype=np.int64).tobytes()).hexdigest()[:16]


@dataclass
class Dataset:
    """Features/targets plus a fixed train/val/test partition.

    ``train_idx`` are the rows models are fitted on; ``val_idx`` is the 20%
    held back from the outer training split; ``test_idx`` is the outer 20%.
    Feature (and, for regression, target) statistics come from ``train_idx``
    only.
    """

    name: str
    task: str
    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int = 0
    feature_mean: np.ndarray = field(init=False)
    feature_std: np.ndarray = field(init=False)
    target_mean: float = field(init=False, default=0.0)
    target_std: float = field(init=False, default=1.0)
    stats_hash: str = field(init=False, default="")

    def __post_init__(self):
        tr = self.X[self.train_idx]
        self.feature_mean = tr.mean(axis=0)
        std = tr.std(axis=0)
        self.feature_std = np.where(std > 0, std, 1.0)
        if self.task == "regression":
            yt = self.y[self.train_idx]
            self.target_mean = float(yt.mean())
            self.target_std = float(yt.std()) or 1.0
        self.stats_hash = index_hash(self.train_idx)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def features(self, split: str) -> np.ndarray:
        """Standardized features of ``split`` in {"train", "val", "test", "fit"}."""
        return (self.X[self._idx(split)] - self.feature_mean) / self.feature_std

    def targets(self, split: str, scaled: bool = False) -> np.ndarray:
        y = self.y[self._idx(split)]
        if scaled and self.task == "regression":
            return (y - self.target_mean) / self.target_std
        return y

    def _idx(self, split: str) -> np.ndarray:
        if split == "fit":
            return np.concatenate([self.train_idx, self.val_idx])
        try:
            return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None

    def train_feature_std(self) -> np.ndarray:
        """Per-feature std of the standardized training features (used by the shifts)."""
        return self.features("train").std(axis=0)


def split_indices(n: int, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle, 80:20 outer split, then 80:20 inner split of the outer train part."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(TEST_FRACTION * n))
    test, rest = perm[:n_test], perm[n_test:]
    n_val = int(round(VAL_FRACTION * len(rest)))
    return np.sort(rest[n_val:]), np.sort(rest[:n_val]), np.sort(test)


def make_dataset(X, y, task: str, name: str = "custom", seed=0, num_classes: int | None = None) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y)
    y = y.astype(np.float64) if task == "regression" else y.astype(int)
    tr, va, te = split_indices(len(X), seed)
    k = 0 if task == "regression" else int(num_classes or (y.max() + 1))
    return Dataset(name, task, X, y, tr, va, te, num_classes=k)


def synthetic_regression(n: int = 500, seed=0, noise: float = 0.1) -> Dataset:
    """y = sin(x) + noise on x ~ U(-3, 3)."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, (n, 1))
    y = np.sin(X[:, 0]) + noise * rng.standard_normal(n)
    return make_dataset(X, y, "regression", "synthetic", seed)


def synthetic_classification(n: int = 500, seed=0, separation: float = 1.5) -> Dataset:
    """Two isotropic Gaussian clusters in 2-D."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    centers = np.array([[-separation, -separation], [separation, separation]]) / np.sqrt(2)
    X = centers[labels] + rng.standard_normal((n, 2))
    return make_dataset(X, labels, "classification", "synthetic", seed, num_classes=2)


def _read_numeric(path: Path, skip_first_if_id: bool = False) -> tuple[pd.DataFrame, np.ndarray]:
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestionError(f"{path}: cannot parse CSV ({e})") from None
    if skip_first_if_id:
        df = df.iloc[:, 1:]
    values = df.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        r, c = np.argwhere(bad)[0]
        rows = np.unique(np.nonzero(bad)[0])[:5] + 2  # 1-based line numbers incl. header
        raise IngestionError(f"{path}: non-numeric value {df.iat[r, c]!r} in column {df.columns[c]!r}"
                             f" (lines {', '.join(map(str, rows))})")
    return df, values.to_numpy(dtype=np.float64)


def load_dataset(path, name: str, seed=0, strict: bool = True, target_column: str | None = None) -> Dataset:
    """Read a CASP (regression) or ESR (binary classification) CSV with header row.

    CASP: target column ``RMSD`` (or the first column) plus 9 features.
    ESR: 178 features and a label column (last by default), with an optional
    leading identifier column; label 1 maps to 1 and labels 2-5 to 0.
    ``strict`` enforces the full-dataset row counts.
    """
    path = Path(path)
    name = name.lower()
    if name == "casp":
        df, vals = _read_numeric(path)
        if vals.shape[1] != CASP_FEATURES + 1:
            raise IngestionError(f"{path}: expected {CASP_FEATURES + 1} columns, found {vals.shape[1]}")
        col = target_column or ("RMSD" if "RMSD" in df.columns else df.columns[0])
        if col not in df.columns:
            raise IngestionError(f"{path}: target column {col!r} not found")
        j = list(df.columns).index(col)
        y = vals[:, j]
        X = np.delete(vals, j, axis=1)
        if strict and len(X) != CASP_ROWS:
            raise IngestionError(f"{path}: expected {CASP_ROWS} rows, found {len(X)}")
        return make_dataset(X, y, "regression", "casp", seed)
    if name == "esr":
        header = pd.read_csv(path, nrows=0).columns if path.exists() else []
        has_id = len(header) == ESR_FEATURES + 2
        df, vals = _read_numeric(path, skip_first_if_id=has_id)
        if vals.shape[1] != ESR_FEATURES + 1:
            raise IngestionError(f"{path}: expected {ESR_FEATURES} feature columns plus a label,"
                                 f" found {vals.shape[1]} numeric columns")
        col = target_column or df.columns[-1]
        if col not in df.columns:
            raise IngestionError(f"{path}: label column {col!r} not found")
        j = list(df.columns).index(col)
        raw = vals[:, j]
        bad = ~np.isin(raw, [1, 2, 3, 4, 5])
        if bad.any():
            rows = np.nonzero(bad)[0][:5] + 2
            raise IngestionError(f"{path}: unknown label values {np.unique(raw[bad])[:5].tolist()}"
                                 f" (lines {', '.join(map(str, rows))})")
        y = (raw == 1).astype(int)
        X = np.delete(vals, j, axis=1)
        if strict and len(X) != ESR_ROWS:
            raise IngestionError(f"{path}: expected {ESR_ROWS} rows, found {len(X)}")
        return make_dataset(X, y, "classification", "esr", seed, num_classes=2)
    raise IngestionError(f"unknown dataset {name!r}; expected 'casp' or 'esr'")

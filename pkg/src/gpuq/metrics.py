"""Accuracy and calibration metrics for regression and classification."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from .predictive import Categorical, GaussianMarginals, GaussianMixture

PROB_FLOOR = 1e-300
DEFAULT_BINS = 10


@dataclass
class ReliabilityBin:
    bin: int
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float


@dataclass
class MetricReport:
    nll: float
    ece: float
    mae: float | None = None
    acc: float | None = None
    reliability: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}


def nll_classification(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label out of range")
    p = probs[np.arange(len(labels)), labels.astype(int)]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def nll_regression(pred: GaussianMarginals | GaussianMixture, y) -> float:
    """Mean negative log predictive density of y."""
    var = pred.var if isinstance(pred, GaussianMarginals) else pred.variances
    if np.any(var <= 0):
        raise ValueError("predictive variances must be positive")
    y = np.asarray(y, dtype=np.float64).ravel()
    return float(np.mean(-pred.log_prob(y).ravel()))


def _confidence_bins(conf: np.ndarray, n_bins: int) -> np.ndarray:
    # bin b (1-based) holds conf in ((b-1)/B, b/B]; zero confidence goes to the first bin
    idx = np.ceil(conf * n_bins).astype(int) - 1
    return np.clip(idx, 0, n_bins - 1)


def ece_classification(probs, labels, n_bins: int = DEFAULT_BINS) -> tuple[float, list[ReliabilityBin]]:
    """Expected calibration error over max-probability confidence bins.

    Bins are weighted by their share of points, |B_b| / N.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    which = _confidence_bins(conf, n_bins)
    bins, ece = [], 0.0
    for b in range(n_bins):
        sel = which == b
        cnt = int(sel.sum())
        acc = float(correct[sel].mean()) if cnt else 0.0
        cf = float(conf[sel].mean()) if cnt else 0.0
        bins.append(ReliabilityBin(b + 1, b / n_bins, (b + 1) / n_bins, cnt, acc, cf))
        if cnt:
            ece += cnt / n * abs(acc - cf)
    return float(ece), bins


def confidence_levels(n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """alpha_k = k / (B + 1), k = 1..B."""
    return np.arange(1, n_bins + 1) / (n_bins + 1)


def interval_z(alpha) -> np.ndarray:
    """Half-width in standard deviations of the central interval holding mass alpha."""
    eta = 1.0 + np.asarray(alpha, dtype=np.float64)
    return np.abs(ndtri(eta / 2.0))


def regression_calibration(means, stds, y, n_bins: int = DEFAULT_BINS) -> tuple[float, list[dict]]:
    """Mean |alpha - coverage(alpha)| over the alpha grid, with the per-alpha table."""
    means = np.asarray(means, dtype=np.float64).ravel()
    stds = np.asarray(stds, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.any(stds <= 0):
        raise ValueError("standard deviations must be positive")
    alphas = confidence_levels(n_bins)
    resid = np.abs(y - means) / stds
    table = []
    for k, (a, z) in enumerate(zip(alphas, interval_z(alphas))):
        cover = float(np.mean(resid <= z))
        table.append({"bin": k + 1, "alpha": float(a), "z": float(z), "coverage": cover, "count": len(y)})
    ce = float(np.mean([abs(r["alpha"] - r["coverage"]) for r in table]))
    return ce, table


def mae(preds, y) -> float:
    preds, y = np.asarray(preds, dtype=np.float64).ravel(), np.asarray(y, dtype=np.float64).ravel()
    if preds.shape != y.shape:
        raise ValueError("length mismatch")
    return float(np.mean(np.abs(preds - y)))


def accuracy(probs, labels) -> float:
    probs, labels = np.asarray(probs), np.asarray(labels)
    if len(probs) != len(labels):
        raise ValueError("length mismatch")
    # argmax returns the lowest index on ties
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def reliability_curve(pred, truth, n_bins: int = DEFAULT_BINS) -> list[dict]:
    """Plot-ready rows (bin, confidence, accuracy, count, ideal), ascending in confidence.

    Classification rows come from non-empty confidence bins; regression rows
    are (alpha, empirical coverage) pairs.
    """
    if isinstance(pred, Categorical):
        _, bins = ece_classification(pred.probs, truth, n_bins)
        rows = [{"bin": b.bin, "confidence": b.confidence, "accuracy": b.accuracy, "count": b.count,
                 "ideal": b.confidence} for b in bins if b.count]
    else:
        mean, var = pred.moments()
        _, table = regression_calibration(mean, np.sqrt(var), truth, n_bins)
        rows = [{"bin": r["bin"], "confidence": r["alpha"], "accuracy": r["coverage"], "count": r["count"],
                 "ideal": r["alpha"]} for r in table]
    return sorted(rows, key=lambda r: r["confidence"])


def reliability_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "confidence", "accuracy", "count"])
    for r in rows:
        w.writerow([r["bin"], repr(float(r["confidence"])), repr(float(r["accuracy"])), r["count"]])
    return buf.getvalue()


def evaluate(pred, truth, n_bins: int = DEFAULT_BINS, metadata: dict | None = None) -> MetricReport:
    """Task-appropriate metric set for one predictive distribution."""
    if isinstance(pred, Categorical):
        ece, _ = ece_classification(pred.probs, truth, n_bins)
        return MetricReport(nll=nll_classification(pred.probs, truth), ece=ece,
                            acc=accuracy(pred.probs, truth),
                            reliability=reliability_curve(pred, truth, n_bins), metadata=metadata or {})
    mean, var = pred.moments()
    ce, _ = regression_calibration(mean, np.sqrt(np.maximum(var, 1e-300)), truth, n_bins)
    return MetricReport(nll=nll_regression(pred, truth), ece=ce, mae=mae(mean, truth),
                        reliability=reliability_curve(pred, truth, n_bins), metadata=metadata or {})

"""Experiment configs, presets, the training loop and the benchmark runners."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import diffcore as dc
from .bayesopt import Categorical as CatDim
from .bayesopt import Continuous, Integer, SearchSpace, TuneResult, tune
from .data import Dataset, load_dataset, synthetic_classification, synthetic_regression
from .deepgp import make_dgp
from .dspp import make_dspp
from .ensemble import DeepEnsemble
from .errors import ConfigError, GpuqError, NumericError
from .metrics import MetricReport, evaluate, reliability_csv
from .shift import KINDS, SEVERITIES, PerturbationSpec, perturb

log = logging.getLogger(__name__)

MODELS = ("dgp", "dspp", "ensemble")
DATASETS = ("casp", "esr", "synthetic")
DEFAULT_EPOCHS = {"casp": 20, "esr": 30, "synthetic": 20}
EVAL_CHUNK = 1024
INDUCING_GRID = (32, 64, 128, 256, 512)
DEPTH_GRID = (1, 2, 4, 8)


@dataclass
class ExperimentConfig:
    model: str = "dspp"
    dataset: str = "synthetic"
    data_path: str | None = None
    synthetic_task: str = "regression"
    n_synthetic: int = 500
    lr: float = 0.01
    epochs: int | None = None
    arch: list[int] = field(default_factory=list)
    num_inducing: int = 128
    num_models: int = 5
    batch_size: int = 256
    num_samples: int = 10
    num_quadrature: int = 8
    samples_per_member: int = 100
    beta: float = 1.0
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    shift: bool = False
    n_bins: int = 10
    target_column: str | None = None
    strict_rows: bool = True
    tune_trials: int = 20
    tune_init: int = 5
    out_dir: str = "runs"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.synthetic_task not in ("regression", "classification"):
            raise ConfigError("synthetic_task must be 'regression' or 'classification'")
        if self.dataset != "synthetic" and not self.data_path:
            raise ConfigError(f"dataset {self.dataset!r} needs data_path")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be positive")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.dataset]
        self.arch = [int(a) for a in self.arch]
        self.seeds = [int(s) for s in self.seeds]
        for name in ("epochs", "num_inducing", "batch_size", "num_samples", "num_quadrature",
                     "samples_per_member", "n_bins", "n_synthetic", "tune_trials", "tune_init"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if any(a < 1 for a in self.arch):
            raise ConfigError("layer widths must be >= 1")
        if self.num_models < 2:
            raise ConfigError("num_models must be >= 2")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.seed < 0 or any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def replace(self, **kw) -> "ExperimentConfig":
        return self.from_dict({**self.to_dict(), **kw})

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    @property
    def task(self) -> str:
        if self.dataset == "synthetic":
            return self.synthetic_task
        return "regression" if self.dataset == "casp" else "classification"


# Tuned hyperparameters from a Bayesian search. In the ESR rows the
# trailing 2 of the listed architecture is the two-class output layer.
PRESETS: dict[str, dict[str, Any]] = {
    "dgp-casp": dict(model="dgp", dataset="casp", lr=0.1, epochs=20, arch=[3], num_inducing=159),
    "ensemble-casp": dict(model="ensemble", dataset="casp", lr=0.025, epochs=20, arch=[128, 64], num_models=9),
    "dspp-casp": dict(model="dspp", dataset="casp", lr=0.055, epochs=20, arch=[], num_inducing=50),
    "dgp-esr": dict(model="dgp", dataset="esr", lr=0.1, epochs=30, arch=[5], num_inducing=200),
    "ensemble-esr": dict(model="ensemble", dataset="esr", lr=0.001, epochs=30, arch=[128, 64], num_models=10),
    "dspp-esr": dict(model="dspp", dataset="esr", lr=0.068, epochs=30, arch=[5, 5], num_inducing=50),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return ExperimentConfig.from_dict({**PRESETS[name], **overrides})


def desk_preset(model: str, task: str = "regression", **overrides) -> ExperimentConfig:
    """Small synthetic configuration (M = 32, 20 epochs) for quick checks."""
    base = dict(model=model, dataset="synthetic", synthetic_task=task, epochs=20, num_inducing=32,
                lr=0.05 if model != "ensemble" else 0.005,
                arch=[] if model != "ensemble" else [32, 16], num_models=5, batch_size=64)
    return ExperimentConfig.from_dict({**base, **overrides})


def build_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synthetic":
        make = synthetic_regression if config.synthetic_task == "regression" else synthetic_classification
        return make(config.n_synthetic, seed=config.seed)
    return load_dataset(config.data_path, config.dataset, seed=config.seed, strict=config.strict_rows,
                        target_column=config.target_column)


def build_model(config: ExperimentConfig, dataset: Dataset, seed: int):
    X = dataset.features("train")
    k = max(dataset.num_classes, 2)
    if config.model == "dgp":
        return make_dgp(X, config.arch, dataset.task, num_classes=k, num_inducing=config.num_inducing,
                        num_samples=config.num_samples, beta=config.beta, seed=seed)
    if config.model == "dspp":
        return make_dspp(X, config.arch, dataset.task, num_classes=k, num_inducing=config.num_inducing,
                         num_quadrature=config.num_quadrature, beta=config.beta, seed=seed)
    return DeepEnsemble(dataset.input_dim, config.arch, num_models=config.num_models, task=dataset.task,
                        num_classes=k, seed=seed, samples_per_member=config.samples_per_member)


def _labels(dataset: Dataset, split: str) -> np.ndarray:
    return dataset.targets(split, scaled=True)


def eval_loss(model, X, y, rng, num_data: int) -> float:
    """Negative objective per data point on a full split, without gradients.

    The regularizer is spread over ``num_data`` points as in training, so
    train and val losses are on the same scale.
    """
    fit = 0.0
    with dc.no_grad():
        for start in range(0, len(X), EVAL_CHUNK):
            sl = slice(start, start + EVAL_CHUNK)
            fit += float(model.data_fit(X[sl], y[sl], rng).value)
        reg = model.beta * float(model.kl().value) if model.beta else 0.0
    return -fit / len(X) + reg / num_data


@dataclass
class TrainResult:
    curves: list[tuple[int, float, float]]

    @property
    def train_losses(self) -> list[float]:
        return [c[1] for c in self.curves]

    @property
    def val_losses(self) -> list[float]:
        return [c[2] for c in self.curves]


def train_model(model, dataset: Dataset, config: ExperimentConfig, seed: int) -> TrainResult:
    """Minibatch Adam over the training split, recording per-epoch train/val loss.

    The train loss of an epoch is the mean minibatch loss; the val loss is
    evaluated on the held-out validation rows after the epoch.
    """
    ss = np.random.SeedSequence([seed, 1])
    shuffle_rng, mc_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    X, y = dataset.features("train"), _labels(dataset, "train")
    Xv, yv = dataset.features("val"), _labels(dataset, "val")
    n = len(X)
    opt = dc.Adam(model.parameters(), lr=config.lr)
    curves = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                value = opt.step(model.loss(X[idx], y[idx], n, mc_rng))
            except (NumericError, np.linalg.LinAlgError) as e:
                raise NumericError(f"training diverged in epoch {epoch}: {e}") from None
            if not math.isfinite(value):
                raise NumericError(f"training diverged in epoch {epoch}: loss is {value}")
            losses.append(value)
        val = eval_loss(model, Xv, yv, np.random.default_rng([seed, 2, epoch]), n) if len(Xv) else float("nan")
        curves.append((epoch, float(np.mean(losses)), val))
        log.info("epoch %d train %.5f val %.5f", epoch, curves[-1][1], val)
    return TrainResult(curves)


def predict_split(model, dataset: Dataset, X: np.ndarray, seed: int):
    """Predictive distribution on already-standardized inputs, in original target units."""
    pred = model.predict(X, seed=seed)
    if dataset.task == "regression":
        pred = pred.affine(dataset.target_mean, dataset.target_std)
    return pred


def _metadata(config: ExperimentConfig, dataset: Dataset, seed: int, **extra) -> dict:
    return {"model": config.model, "dataset": dataset.name, "task": dataset.task, "seed": seed,
            "config_hash": config.config_hash(), "version": __version__,
            "stats_hash": dataset.stats_hash, **extra}


def _header(config: ExperimentConfig) -> str:
    return f"# gpuq {__version__} config_hash={config.config_hash()}\n"


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class RunResult:
    report: MetricReport
    train: TrainResult
    model: Any
    dataset: Dataset


def run_experiment(config: ExperimentConfig, out_dir=None, dataset: Dataset | None = None,
                   seed: int | None = None) -> RunResult:
    """Train one model on the training split and evaluate it on the test split."""
    seed = config.seed if seed is None else seed
    dataset = dataset or build_dataset(config)
    model = build_model(config, dataset, seed)
    train = train_model(model, dataset, config, seed)
    pred = predict_split(model, dataset, dataset.features("test"), seed)
    report = evaluate(pred, dataset.targets("test"), config.n_bins, _metadata(config, dataset, seed))
    if out_dir is not None:
        write_run(Path(out_dir), config, report, train, model)
    return RunResult(report, train, model, dataset)


def loss_curve_csv(train: TrainResult) -> str:
    lines = ["epoch,train_loss,val_loss\n"]
    lines += [f"{e},{_fmt(t)},{_fmt(v)}\n" for e, t, v in train.curves]
    return "".join(lines)


def write_run(out: Path, config: ExperimentConfig, report: MetricReport, train: TrainResult, model) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "loss_curve.csv").write_text(_header(config) + loss_curve_csv(train))
    (out / "reliability.csv").write_text(_header(config) + reliability_csv(report.reliability))
    save_model(out / "model.npz", model, config)


def save_model(path: Path, model, config: ExperimentConfig) -> None:
    meta = json.dumps({"config_hash": config.config_hash(), "version": __version__})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **model.state_dict())


def load_model(path, config: ExperimentConfig, dataset: Dataset):
    model = build_model(config, dataset, config.seed)
    try:
        with np.load(path) as z:
            model.load_state_dict({k: z[k] for k in z.files if k != "__meta__"})
    except (OSError, KeyError, ValueError) as e:
        raise GpuqError(f"cannot load model from {path}: {e}") from None
    return model


def _task_metric(report: MetricReport) -> tuple[str, float]:
    return ("mae", report.mae) if report.mae is not None else ("acc", report.acc)


SHIFT_COLUMNS = ("model", "seed", "kind", "severity", "metric", "value")


def run_shift_experiment(config: ExperimentConfig, out_dir=None, kinds=KINDS,
                         severities=SEVERITIES) -> list[dict]:
    """Train one model per seed and evaluate it on every perturbed copy of the test split.

    A seed whose training fails contributes a single row with metric
    ``failed`` and a NaN value; the remaining seeds still run.
    """
    dataset = build_dataset(config)
    X_test, y_test = dataset.features("test"), dataset.targets("test")
    sigma = dataset.train_feature_std()
    rows: list[dict] = []
    for seed in config.seeds:
        try:
            model = build_model(config, dataset, seed)
            train_model(model, dataset, config, seed)
        except GpuqError as e:
            log.warning("seed %d failed: %s", seed, e)
            rows.append(dict(model=config.model, seed=seed, kind="", severity=float("nan"),
                             metric="failed", value=float("nan")))
            continue
        for k, kind in enumerate(kinds):
            for j, sev in enumerate(severities):
                pseed = int(np.random.SeedSequence([seed, k, j]).generate_state(1)[0])
                Xp = perturb(X_test, PerturbationSpec(kind, sev, seed=pseed, feature_std=sigma.tolist()))
                report = evaluate(predict_split(model, dataset, Xp, seed), y_test, config.n_bins)
                name, value = _task_metric(report)
                for metric, v in (("nll", report.nll), ("ece", report.ece), (name, value)):
                    rows.append(dict(model=config.model, seed=seed, kind=kind, severity=float(sev),
                                     metric=metric, value=float(v)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "shift_results.csv").write_text(_header(config) + rows_csv(rows, SHIFT_COLUMNS))
    return rows


def rows_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns})
    return buf.getvalue()


ABLATION_COLUMNS = ("model", "sweep", "value", "test_nll")


def run_ablation(kind: str, config: ExperimentConfig, out_dir=None, grid=None, epochs: int = 20,
                 lr: float = 0.01) -> list[dict]:
    """Inducing-point (single layer, M varies) or depth (width-1 hidden layers, M = 128) sweep."""
    if config.model not in ("dgp", "dspp"):
        raise ConfigError("ablations apply to dgp and dspp only")
    if kind not in ("inducing", "depth"):
        raise ConfigError(f"ablation kind must be 'inducing' or 'depth', got {kind!r}")
    grid = tuple(grid or (INDUCING_GRID if kind == "inducing" else DEPTH_GRID))
    dataset = build_dataset(config)
    rows = []
    for v in grid:
        if kind == "inducing":
            cfg = config.replace(arch=[], num_inducing=int(v), lr=lr, epochs=epochs)
        else:
            cfg = config.replace(arch=[1] * int(v), num_inducing=128, lr=lr, epochs=epochs)
        res = run_experiment(cfg, dataset=dataset)
        rows.append(dict(model=config.model, sweep=kind, value=int(v), test_nll=float(res.report.nll)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{kind}.csv").write_text(_header(config) + rows_csv(rows, ABLATION_COLUMNS))
    return rows


def gp_arch_choices(dataset: str) -> tuple[tuple[int, ...], ...]:
    wide = 5 if dataset == "esr" else 3
    return ((), (1,), (1, 1), (wide,), (wide, wide))


def search_space(model: str, dataset: str) -> SearchSpace:
    lr = Continuous("lr", 1e-3, 1e-1, log=True)
    if model == "ensemble":
        return SearchSpace([lr, CatDim("nn_width", (8, 16, 32, 64)), Integer("num_models", 2, 10)])
    return SearchSpace([lr, CatDim("arch", gp_arch_choices(dataset)), Integer("num_inducing", 50, 200)])


def apply_trial(config: ExperimentConfig, trial: dict) -> ExperimentConfig:
    kw = {"lr": trial["lr"]}
    if "nn_width" in trial:
        n = int(trial["nn_width"])
        kw.update(arch=[2 * n, n], num_models=int(trial["num_models"]))
    else:
        kw.update(arch=list(trial["arch"]), num_inducing=int(trial["num_inducing"]))
    return config.replace(**kw)


def run_tuning(config: ExperimentConfig, out_dir=None, trials: int | None = None,
               init: int | None = None) -> tuple[ExperimentConfig, TuneResult]:
    """Bayesian search minimizing validation NLL; models train on the inner training rows."""
    dataset = build_dataset(config)
    space = search_space(config.model, config.dataset)
    Xv, yv = dataset.features("val"), dataset.targets("val")

    def objective(trial: dict) -> float:
        cfg = apply_trial(config, trial)
        model = build_model(cfg, dataset, config.seed)
        train_model(model, dataset, cfg, config.seed)
        return evaluate(predict_split(model, dataset, Xv, config.seed), yv, cfg.n_bins).nll

    result = tune(objective, space, trials=trials or config.tune_trials, init=init or config.tune_init,
                  seed=config.seed)
    best = apply_trial(config, result.best.config)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stamp = {"config_hash": config.config_hash(), "version": __version__}
        lines = [json.dumps({**json.loads(t.to_json()), **stamp}, sort_keys=True) + "\n" for t in result.history]
        (out / "trials.jsonl").write_text("".join(lines))
        (out / "best_config.json").write_text(
            json.dumps(best.to_dict(), indent=2, sort_keys=True) + "\n")
    return best, result


def summarize(out_dir) -> dict:
    """Collect whatever result files exist under ``out_dir`` into one summary."""
    out = Path(out_dir)
    if not out.is_dir():
        raise GpuqError(f"{out} is not a directory")
    summary: dict[str, Any] = {}
    for p in sorted(out.rglob("metrics.json")):
        summary[str(p.parent.relative_to(out)) or "."] = json.loads(p.read_text())
    for p in sorted(out.rglob("shift_results.csv")):
        rows = list(csv.DictReader(line for line in p.read_text().splitlines() if not line.startswith("#")))
        agg: dict[str, list[float]] = {}
        for r in rows:
            if r["metric"] != "failed":
                agg.setdefault(f"{r['kind']}/{r['severity']}/{r['metric']}", []).append(float(r["value"]))
        summary[str(p.relative_to(out))] = {k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
                                            for k, v in agg.items()}
    if not summary:
        raise GpuqError(f"no results found under {out}")
    return summary

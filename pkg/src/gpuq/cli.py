"""Command-line entry point: train, evaluate, tune, shift, ablate, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, GpuqError
from .experiment import (PRESETS, ExperimentConfig, build_dataset, load_model, predict_split, run_ablation,
                         run_experiment, run_shift_experiment, run_tuning, summarize)
from .metrics import evaluate
from .shift import KINDS, PerturbationSpec, perturb


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", choices=["dgp", "dspp", "ensemble"])
    common.add_argument("--dataset", choices=["casp", "esr", "synthetic"])
    common.add_argument("--data-path", help="CSV file for casp/esr")
    common.add_argument("--config", help="JSON file with ExperimentConfig keys")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gpuq", description="GP uncertainty benchmark")
    p.add_argument("--version", action="version", version=f"gpuq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model and evaluate on the test split")
    ev = sub.add_parser("evaluate", parents=[common], help="re-evaluate a trained run directory")
    ev.add_argument("--run", required=True, help="directory written by 'train'")
    ev.add_argument("--perturb", choices=KINDS)
    ev.add_argument("--severity", type=float, default=0.0)
    tu = sub.add_parser("tune", parents=[common], help="Bayesian hyperparameter search")
    tu.add_argument("--trials", type=int)
    tu.add_argument("--init", type=int)
    sub.add_parser("shift", parents=[common], help="multi-seed distribution-shift protocol")
    ab = sub.add_parser("ablate", parents=[common], help="inducing-point or depth sweep")
    ab.add_argument("--kind", choices=["inducing", "depth"], required=True)
    rp = sub.add_parser("report", help="summarize result files under a directory")
    rp.add_argument("--out", required=True)
    return p


def resolve_config(args) -> ExperimentConfig:
    """Preset, then config file, then explicit flags; later sources win."""
    d: dict = {}
    if args.preset:
        d.update(PRESETS[args.preset])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        d.update(loaded)
    for key, flag in (("model", "model"), ("dataset", "dataset"), ("data_path", "data_path"),
                      ("seed", "seed"), ("epochs", "epochs"), ("out_dir", "out")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    return ExperimentConfig.from_dict(d)


def _cmd_evaluate(args) -> dict:
    run = Path(args.run)
    cfg = ExperimentConfig.from_json(run / "config.json")
    dataset = build_dataset(cfg)
    model = load_model(run / "model.npz", cfg, dataset)
    X = dataset.features("test")
    meta = {"config_hash": cfg.config_hash(), "version": __version__, "perturbation": None}
    if args.perturb:
        spec = PerturbationSpec(args.perturb, args.severity, seed=cfg.seed,
                                feature_std=dataset.train_feature_std().tolist())
        X = perturb(X, spec)
        meta["perturbation"] = spec.to_dict()
    report = evaluate(predict_split(model, dataset, X, cfg.seed), dataset.targets("test"), cfg.n_bins, meta)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics_eval.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report.to_dict()


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        print(json.dumps(summarize(args.out), indent=2, sort_keys=True))
        return 0
    if args.command == "evaluate":
        print(json.dumps(_cmd_evaluate(args), indent=2, sort_keys=True))
        return 0
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    if args.command == "train":
        res = run_experiment(cfg, out_dir=out)
        print(json.dumps({k: v for k, v in res.report.to_dict().items() if k != "reliability"}, indent=2))
    elif args.command == "tune":
        best, result = run_tuning(cfg, out_dir=out, trials=args.trials, init=args.init)
        print(json.dumps({"best_value": result.best.value, "best": result.best.config}, default=list))
    elif args.command == "shift":
        rows = run_shift_experiment(cfg, out_dir=out)
        print(f"wrote {len(rows)} rows to {out / 'shift_results.csv'}")
    elif args.command == "ablate":
        rows = run_ablation(args.kind, cfg, out_dir=out)
        for r in rows:
            print(f"{r['sweep']}={r['value']}: test NLL {r['test_nll']:.4f}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except GpuqError as e:
        print(f"gpuq: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

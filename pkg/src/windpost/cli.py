"""Command-line workflows: synth, train, bag, evaluate, search, compare-crps.

Every command writes a ``manifest.json`` (resolved configuration, seed and
SHA-256 hashes of inputs and outputs) next to its outputs.  Passing that
manifest back through ``--config`` reruns the command with the same settings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bagging import BaggedModel, bag_train
from .data import DEFAULT_FOLDS, SCENARIOS, FoldSpec, generate_synthetic, load_csv, split_folds, write_csv
from .errors import ConfigurationError, WindpostError
from .experiments import compare_crps
from .hyperopt import SearchSpace, pareto_front, random_search, write_front_json, write_trials_csv
from .optim import DENSE_DEFAULTS, LINEAR_DEFAULTS, TrainConfig, train
from .param_models import DenseConfig, ModelSpec, model_from_dict
from .scoring import PRESETS, weight_function
from .verification import Climatology, EvalConfig, evaluate

log = logging.getLogger("windpost")

TRAIN_FOLDS = ("fold1", "fold2", "fold3")

# built-in defaults per option; JSON config values override these, flags override both
DEFAULTS = {
    "scenario": "calibrated",
    "n": 25000,
    "kind": "linear",
    "family": "tn",
    "loss": "constant",
    "loss_mode": "sampled",
    "epochs": None,
    "patience": None,
    "optimizer": None,
    "learning_rate": None,
    "batch_size": None,
    "n_samples": None,
    "layers": 2,
    "units": 170,
    "l2": 0.031658,
    "K": 10,
    "reference": "climatology",
    "bootstrap": 10000,
    "eval_samples": 1000,
    "svg": False,
    "trials": 20,
    "runs": 50,
    "folds": None,
    "space": None,
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict, inputs: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return dict(data.get("config", data))  # a manifest carries its settings under "config"


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the JSON config and explicit flags (in that order)."""
    file_cfg = _load_config(args.config)
    out = {}
    for key, value in vars(args).items():
        if key in ("config", "func", "verbose"):
            continue
        if value is not None:
            out[key] = value
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = DEFAULTS.get(key)
    for key, value in file_cfg.items():
        out.setdefault(key, value)
    return out


def _folds(cfg: dict) -> FoldSpec:
    spec = cfg.get("folds")
    if spec is None:
        return DEFAULT_FOLDS
    if isinstance(spec, dict):
        return FoldSpec.from_dict(spec)
    return FoldSpec.load(spec)


def _dataset(cfg: dict):
    return split_folds(load_csv(cfg["data"]), _folds(cfg))


def _train_config(cfg: dict) -> TrainConfig:
    base = dict(LINEAR_DEFAULTS if cfg["kind"] == "linear" else DENSE_DEFAULTS)
    overrides = {
        "optimizer": cfg["optimizer"],
        "learning_rate": cfg["learning_rate"],
        "batch_size": cfg["batch_size"],
        "n_samples": cfg["n_samples"],
        "patience": cfg["patience"],
        "max_epochs": cfg["epochs"],
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["epochs"] is not None:
        base["until_converged"] = False
    loss = cfg["loss"]
    weight = weight_function(loss if isinstance(loss, (str, dict)) else str(loss))
    return TrainConfig(weight, loss=cfg["loss_mode"], seed=int(cfg["seed"]), **base)


def _model_spec(cfg: dict) -> ModelSpec:
    dense = None
    if cfg["kind"] == "dense":
        dense = DenseConfig(layers=int(cfg["layers"]), units=int(cfg["units"]), l2=float(cfg["l2"]))
    return ModelSpec(cfg["kind"], cfg["family"], dense)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


# --- commands


def cmd_synth(cfg: dict) -> int:
    ds = generate_synthetic(int(cfg["n"]), cfg["scenario"], int(cfg["seed"]), _folds(cfg))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    truth = out.with_name(out.stem + ".truth.json")
    _dump(truth, ds.truth)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "synth", cfg, [], [out, truth])
    print(f"wrote {len(ds)} records to {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    ds = _dataset(cfg)
    tcfg = _train_config(cfg)
    validation = None
    train_ds = ds.select_folds(*TRAIN_FOLDS)
    if tcfg.patience > 0:
        # early stopping holds out the last cross-validation fold
        train_ds, validation = ds.select_folds(*TRAIN_FOLDS[:-1]), ds.select_folds(TRAIN_FOLDS[-1])
    result = train(_model_spec(cfg).build(seed=tcfg.seed), train_ds, tcfg, validation)
    out = _out_dir(cfg)
    model_path = _dump(out / "model.json", result.model.to_dict())
    trace_path = out / "trace.csv"
    with open(trace_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for row in result.trace:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},{row['lr']!r}\n")
    write_manifest(out / "manifest.json", "train", cfg, [cfg["data"]], [model_path, trace_path])
    print(f"trained {result.model.kind} {result.model.family} for {result.stopped_epoch} epochs -> {model_path}")
    return 0


def cmd_bag(cfg: dict) -> int:
    ds = _dataset(cfg)
    tcfg = _train_config(cfg)
    bag = bag_train(_model_spec(cfg), ds.select_folds(*TRAIN_FOLDS), tcfg, int(cfg["K"]), int(cfg["seed"]),
                    int(cfg["jobs"] or 1))
    out = _out_dir(cfg)
    path = _dump(out / "bag.json", bag.to_dict())
    write_manifest(out / "manifest.json", "bag", cfg, [cfg["data"]], [path])
    print(f"trained a bag of {bag.K} members -> {path}")
    return 0


def load_forecaster(path):
    d = json.loads(Path(path).read_text())
    return BaggedModel.from_dict(d) if d.get("bag") else model_from_dict(d)


def cmd_evaluate(cfg: dict) -> int:
    ds = _dataset(cfg)
    test = ds.select_folds("test")
    model = load_forecaster(cfg["model"])
    inputs = [cfg["data"], cfg["model"]]
    if cfg["reference"] == "climatology":
        reference = Climatology.from_dataset(ds.select_folds(*TRAIN_FOLDS))
    else:
        reference = load_forecaster(cfg["reference"])
        inputs.append(cfg["reference"])
    ecfg = EvalConfig(bootstrap_B=int(cfg["bootstrap"]), seed=int(cfg["seed"]), n_samples=int(cfg["eval_samples"]))
    report = evaluate(model, test, reference, ecfg)
    out = _out_dir(cfg)
    paths = report.write(out, svg=bool(cfg["svg"]))
    write_manifest(out / "manifest.json", "evaluate", cfg, inputs, paths)
    print(f"CRPS {report.crps_mean:.4f}  twCRPS12 {report.twcrps12_mean:.4f}  ({report.n_records} test records)")
    return 0


def cmd_search(cfg: dict) -> int:
    ds = _dataset(cfg)
    space_cfg = dict(cfg.get("space") or {})
    space_cfg.setdefault("kind", cfg["kind"])
    if cfg["epochs"] is not None:
        space_cfg["max_epochs"] = int(cfg["epochs"])
    if "families" not in space_cfg and space_cfg["kind"] == "linear":
        space_cfg["families"] = ("tn",)
    space = SearchSpace.from_dict(space_cfg)
    trials = random_search(space, int(cfg["trials"]), ds, int(cfg["seed"]), int(cfg["jobs"] or 1))
    front = pareto_front(trials)
    out = _out_dir(cfg)
    trials_path, front_path = out / "trials.csv", out / "front.json"
    write_trials_csv(trials, trials_path)
    write_front_json(front, front_path)
    write_manifest(out / "manifest.json", "search", cfg, [cfg["data"]], [trials_path, front_path])
    n_div = sum(t.status != "ok" for t in trials)
    print(f"{len(trials)} trials ({n_div} diverged), {len(front)} on the Pareto front")
    return 0


def cmd_compare_crps(cfg: dict) -> int:
    if cfg.get("data"):
        ds = _dataset(cfg)
        inputs = [cfg["data"]]
    else:
        ds = split_folds(generate_synthetic(int(cfg["n"]), "calibrated", int(cfg["seed"]), _folds(cfg)), _folds(cfg))
        inputs = []
    res = compare_crps(ds.select_folds(*TRAIN_FOLDS), ds.select_folds("test"), n_runs=int(cfg["runs"]),
                       epochs=int(cfg["epochs"] or 20), n_samples=int(cfg["n_samples"] or 250),
                       seed=int(cfg["seed"]), eval_samples=int(cfg["eval_samples"]))
    out = _out_dir(cfg)
    runs_path = out / "skill_scores.csv"
    res.write_csv(runs_path)
    summary = {
        "reference_crps": res.reference_crps,
        "reference_twcrps12": res.reference_twcrps12,
        "median_skill": {arm: {s: float(np.median(res.skill(arm, s))) for s in ("crps", "twcrps12")}
                         for arm in res.crps},
        "median_gap": {s: res.median_gap(s) for s in ("crps", "twcrps12")},
    }
    summary_path = _dump(out / "summary.json", summary)
    write_manifest(out / "manifest.json", "compare-crps", cfg, inputs, [runs_path, summary_path])
    print(f"median skill gap: CRPS {summary['median_gap']['crps']:.5f}, "
          f"twCRPS12 {summary['median_gap']['twcrps12']:.5f}")
    return 0


# --- argument parsing


def _common(p: argparse.ArgumentParser, out_help: str = "output directory") -> None:
    p.add_argument("--config", help="JSON file with option values (a manifest.json also works)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--jobs", type=int, default=None, help="parallel worker processes (default 1)")
    p.add_argument("--out", default=None, help=out_help)
    p.add_argument("--folds", default=None, help="JSON fold specification (default: built-in seasons)")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="input CSV")
    p.add_argument("--kind", choices=("linear", "dense"), default=None)
    p.add_argument("--family", default=None, help="tn, ln, gev, mix_tn_ln, mix_tn_gev, amix_tn_ln, amix_tn_gev")
    p.add_argument("--loss", default=None, help=f"weight preset: {', '.join(PRESETS)}")
    p.add_argument("--loss-mode", dest="loss_mode", choices=("sampled", "analytic"), default=None)
    p.add_argument("--epochs", type=int, default=None, help="fixed number of epochs")
    p.add_argument("--patience", type=int, default=None, help="early-stopping patience (0 disables)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--units", type=int, default=None)
    p.add_argument("--l2", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windpost", description="Weighted-CRPS wind-speed post-processing")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p, "output CSV path")
    p.add_argument("--scenario", choices=SCENARIOS, default=None)
    p.add_argument("--n", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on the training folds")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bag", help="train a bag of K models")
    _common(p)
    _model_flags(p)
    p.add_argument("--K", type=int, default=None, help="number of members (default 10)")
    p.set_defaults(func=cmd_bag)

    p = sub.add_parser("evaluate", help="verify a model or bag on the test fold")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--model", default=None, help="model.json or bag.json")
    p.add_argument("--reference", default=None, help="'climatology' (default) or a model/bag JSON")
    p.add_argument("--bootstrap", type=int, default=None, help="bootstrap resamples (default 10000)")
    p.add_argument("--eval-samples", dest="eval_samples", type=int, default=None)
    p.add_argument("--svg", action="store_true", default=None, help="also write bss_curve.svg")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random search with Pareto-front extraction")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--kind", choices=("linear", "dense"), default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None, help="epochs per trial and fold")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("compare-crps", help="paired analytic vs sampled CRPS training runs")
    _common(p)
    p.add_argument("--data", default=None, help="input CSV (default: synthetic calibrated data)")
    p.add_argument("--n", type=int, default=None, help="synthetic records when --data is absent")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--eval-samples", dest="eval_samples", type=int, default=None)
    p.set_defaults(func=cmd_compare_crps)
    return parser


_REQUIRED = {
    "synth": ("out",),
    "train": ("data", "out"),
    "bag": ("data", "out"),
    "evaluate": ("data", "model", "out"),
    "search": ("data", "out"),
    "compare-crps": ("out",),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        cfg["seed"] = int(cfg.get("seed") or 0)
        missing = [k for k in _REQUIRED[args.command] if not cfg.get(k)]
        if missing:
            parser.error(f"{args.command}: missing --{', --'.join(missing)}")
        return args.func(cfg)
    except (WindpostError, ValueError, OSError) as exc:
        print(f"windpost: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

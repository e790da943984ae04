"""Random search over model configurations with exact Pareto extraction.

The two validation objectives are the mean CRPS and the mean twCRPS12
(indicator weight at 12 m/s); both are minimized.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, TrainingDivergence
from .optim import DENSE_DEFAULTS, LINEAR_DEFAULTS, TrainConfig, train
from .param_models import DENSE_FAMILIES, LINEAR_FAMILIES, DenseConfig, ModelSpec
from .scoring import WeightFunction
from .verification import mean_scores

OK, DIVERGED = "ok", "diverged"
CV_FOLDS = ("fold1", "fold2", "fold3")


@dataclass
class Trial:
    index: int
    config: dict
    crps: float = math.nan
    twcrps12: float = math.nan
    status: str = OK
    message: str = ""

    def __post_init__(self):
        if self.status == OK and not (math.isfinite(self.crps) and math.isfinite(self.twcrps12)):
            raise ValueError("a successful trial needs finite objectives")

    def to_dict(self) -> dict:
        return asdict(self)


def _dominates(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_mask(points) -> np.ndarray:
    """Boolean mask of the nondominated rows of an (n, 2) array (minimization)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    best_before = math.inf  # smallest second objective among strictly smaller first objectives
    i = 0
    while i < n:
        j = i
        while j < n and pts[order[j], 0] == pts[order[i], 0]:
            j += 1
        group = order[i:j]
        group_min = pts[group[0], 1]  # sorted by second objective within the group
        for k in group:
            y = pts[k, 1]
            mask[k] = y < best_before and y <= group_min
        best_before = min(best_before, group_min)
        i = j
    return mask


def pareto_front(trials) -> list[Trial]:
    """Nondominated successful trials, sorted by CRPS (then twCRPS12)."""
    ok = [t for t in trials if t.status == OK]
    mask = pareto_mask([(t.crps, t.twcrps12) for t in ok])
    front = [t for t, keep in zip(ok, mask) if keep]
    return sorted(front, key=lambda t: (t.crps, t.twcrps12))


def _range(lo, hi, name):
    if lo > hi:
        raise ConfigurationError(f"empty range for {name}: [{lo}, {hi}]")
    return float(lo), float(hi)


@dataclass
class SearchSpace:
    """Sampling ranges; a range with lo == hi or a one-element choice is fixed."""

    kind: str = "dense"
    families: tuple = DENSE_FAMILIES
    mu: tuple = (-5.0, 15.0)
    sigma: tuple = (1e-4, 10.0)  # log scale
    c: tuple = (1e-6, 1.0)
    optimizers: tuple = ("adam", "sgd")
    learning_rate: tuple = (1e-4, 0.03)
    l2: tuple = (5e-5, 0.1)  # log scale
    layers: tuple = (1, 2, 3, 4, 5)
    units: tuple = (30, 200, 10)  # lo, hi, step
    batch_sizes: tuple = (16, 32, 64, 128, 256, 512, 1024)
    max_epochs: int = 30
    patience: int = 0
    n_samples: int | None = None
    eval_samples: int = 1000

    def __post_init__(self):
        allowed = LINEAR_FAMILIES if self.kind == "linear" else DENSE_FAMILIES
        if self.kind not in ("linear", "dense"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        bad = [f for f in self.families if f not in allowed]
        if bad or not self.families:
            raise ConfigurationError(f"{self.kind} search supports families {allowed}, got {list(self.families)}")
        for name in ("mu", "sigma", "c", "learning_rate", "l2"):
            setattr(self, name, _range(*getattr(self, name), name))
        if self.sigma[0] <= 0 or self.l2[0] <= 0:
            raise ConfigurationError("log-scale ranges must be positive")
        for name in ("optimizers", "layers", "batch_sizes", "families"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must not be empty")
            setattr(self, name, tuple(getattr(self, name)))
        lo, hi, step = self.units
        if step <= 0 or lo > hi:
            raise ConfigurationError("units range must be lo <= hi with a positive step")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def sample(self, rng: np.random.Generator) -> dict:
        """Draw one configuration; every field consumes the generator in a fixed order."""
        units_lo, units_hi, step = self.units
        n_units = (units_hi - units_lo) // step + 1
        cfg = {
            "kind": self.kind,
            "family": self.families[rng.integers(len(self.families))],
            "mu": float(rng.uniform(*self.mu)),
            "sigma": float(np.exp(rng.uniform(np.log(self.sigma[0]), np.log(self.sigma[1])))),
            "c": float(rng.uniform(*self.c)),
            "optimizer": self.optimizers[rng.integers(len(self.optimizers))],
            "learning_rate": float(rng.uniform(*self.learning_rate)),
            "l2": float(np.exp(rng.uniform(np.log(self.l2[0]), np.log(self.l2[1])))),
            "layers": int(self.layers[rng.integers(len(self.layers))]),
            "units": int(units_lo + step * rng.integers(n_units)),
            "batch_size": int(self.batch_sizes[rng.integers(len(self.batch_sizes))]),
        }
        if self.kind == "linear":
            for k in ("l2", "layers", "units"):
                cfg.pop(k)
        return cfg


def trial_model(config: dict):
    dense = None
    if config["kind"] == "dense":
        dense = DenseConfig(layers=config["layers"], units=config["units"], l2=config["l2"])
    return ModelSpec(config["kind"], config["family"], dense)


def trial_train_config(config: dict, space: SearchSpace, seed: int) -> TrainConfig:
    base = dict(LINEAR_DEFAULTS if config["kind"] == "linear" else DENSE_DEFAULTS)
    base.update(
        optimizer=config["optimizer"],
        learning_rate=config["learning_rate"],
        batch_size=config["batch_size"],
        max_epochs=space.max_epochs,
        patience=space.patience,
        until_converged=False,
        seed=seed,
    )
    if space.n_samples is not None:
        base["n_samples"] = space.n_samples
    weight = WeightFunction("shifted_gauss_cdf", mu=config["mu"], sigma=config["sigma"], c=config["c"])
    return TrainConfig(weight, **base)


def run_trial(index: int, config: dict, ds: Dataset, space: SearchSpace, seed: int,
              folds: tuple = CV_FOLDS) -> Trial:
    """Cross-validated objectives: unweighted mean over the validation folds."""
    spec = trial_model(config)
    cfg = trial_train_config(config, space, seed)
    crps, tw = [], []
    try:
        for k in folds:
            others = [f for f in folds if f != k]
            tr, va = ds.select_folds(*others), ds.select_folds(k)
            model = train(spec.build(seed=seed), tr, cfg).model
            c, t = mean_scores(model, va, space.eval_samples, seed)
            crps.append(c)
            tw.append(t)
    except (TrainingDivergence, FloatingPointError) as exc:
        return Trial(index, config, status=DIVERGED, message=str(exc))
    c, t = float(np.mean(crps)), float(np.mean(tw))
    if not (math.isfinite(c) and math.isfinite(t)):
        return Trial(index, config, status=DIVERGED, message="non-finite validation score")
    return Trial(index, config, c, t)


def _run(args):
    return run_trial(*args)


def random_search(space: SearchSpace, n_trials: int, ds: Dataset, seed: int = 0, jobs: int = 1,
                  folds: tuple = CV_FOLDS) -> list[Trial]:
    """Seeded random search; trial i samples from ``default_rng([seed, i])``."""
    if n_trials < 1:
        raise ConfigurationError("n_trials must be at least 1")
    tasks = []
    for i in range(n_trials):
        config = space.sample(np.random.default_rng([seed, i]))
        tasks.append((i, config, ds, space, seed * 100003 + i, tuple(folds)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run, tasks))
    return [_run(t) for t in tasks]


CONFIG_COLUMNS = ("kind", "family", "mu", "sigma", "c", "optimizer", "learning_rate", "l2", "layers", "units",
                  "batch_size")


def write_trials_csv(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *CONFIG_COLUMNS, "crps", "twcrps12", "status", "message"])
        for t in trials:
            w.writerow([t.index, *(t.config.get(k, "") for k in CONFIG_COLUMNS), repr(t.crps), repr(t.twcrps12),
                        t.status, t.message])


def write_front_json(front, path) -> None:
    with open(path, "w") as fh:
        json.dump([t.to_dict() for t in front], fh, indent=2)

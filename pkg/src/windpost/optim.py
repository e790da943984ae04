"""Training by stochastic gradient descent on sampled (w)CRPS losses.

Samples are pushed through the quantile function of the predictive law, so
for a fixed noise block the loss is a deterministic, almost everywhere
differentiable function of the model parameters.  Gradients are the exact
derivatives of that sampled loss (pathwise / reparametrization gradients),
assembled by hand from the per-family quantile derivatives.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, compute_norm_stats, normalize
from .dists import Mixture, uniform_noise
from .errors import ConfigurationError, DomainError, TrainingDivergence
from .param_models import ALPHA_RANGE, BETA_RANGE, LinearModel, components_of, is_mixture
from .scoring import WeightFunction, crps_tn, crps_tn_grad, mean_sampled_wcrps, wcrps_grad_samples, weight_function

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    weight: WeightFunction = field(default_factory=WeightFunction)
    n_samples: int = 250
    optimizer: str = "adam"
    learning_rate: float = 0.01
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 0
    pretrain_epochs: int = 75
    seed: int = 0
    # "sampled" uses the kernel estimator; "analytic" the closed-form TN CRPS
    loss: str = "sampled"
    until_converged: bool = True
    converge_tol: float = 1e-5
    converge_window: int = 5
    val_samples: int = 1000

    def __post_init__(self):
        self.weight = weight_function(self.weight)
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("sampled", "analytic"):
            raise ConfigurationError(f"unknown loss mode {self.loss!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight"] = self.weight.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# optimizer defaults for the two model kinds
LINEAR_DEFAULTS = dict(optimizer="adam", learning_rate=0.01, batch_size=256, n_samples=250)
DENSE_DEFAULTS = dict(optimizer="adam", learning_rate=0.000105, batch_size=64, n_samples=1000, patience=10,
                      until_converged=False)


@dataclass
class OptimizerState:
    kind: str = "adam"
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.kind, {k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()}, self.step)


def optimizer_step(state: OptimizerState, params: dict, grad: dict, cfg: TrainConfig | float):
    """Update ``params`` in place; returns (params, state)."""
    lr = cfg if isinstance(cfg, float) else cfg.learning_rate
    state.step += 1
    if state.kind == "sgd":
        for k, g in grad.items():
            params[k] -= lr * g
        return params, state
    bc1 = 1.0 - ADAM_BETA1**state.step
    bc2 = 1.0 - ADAM_BETA2**state.step
    for k, g in grad.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        params[k] -= lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + ADAM_EPS)
    return params, state


def _pathwise(dist, u):
    """Samples and their derivatives keyed like ``dist_param_names``."""
    x, g = dist._quantile_grad(u)
    if not isinstance(dist, Mixture):
        return x, g
    (g1, g2), (w1, w2) = g["components"], g["weights"]
    flat = {"loc1": g1["loc"], "scale1": g1["scale"], "loc2": g2["loc"], "scale2": g2["scale"], "weight": w1 - w2}
    if "shape" in g2:
        flat["shape2"] = g2["shape"]
    return x, flat


def batch_noise(seed: int, epoch: int, batch: int, size: int, n: int) -> np.ndarray:
    """Uniforms for one mini-batch, shape (size, 2n).

    The shuffle is itself a function of (seed, epoch), so the block a record
    receives is determined by (seed, epoch, record index).
    """
    return uniform_noise(np.random.default_rng([seed, epoch, batch]), (size, 2 * n))


def _batch_terms(model, X, x_w, y, cfg: TrainConfig, noise):
    B = len(y)
    dist, cache = model.forward(X, x_w, column=True)
    if cfg.loss == "analytic":
        value, dl, ds = crps_tn_grad(dist.loc, dist.scale, y[:, None])
        return value[:, 0], {"loc": dl[:, 0] / B, "scale": ds[:, 0] / B}, cache
    n = noise.shape[1] // 2
    x, gx = _pathwise(dist, noise[:, :n])
    x2, gx2 = _pathwise(dist, noise[:, n:2 * n])
    value, dx, dx2 = wcrps_grad_samples(x, x2, y[:, None], cfg.weight)
    dvals = {k: ((dx * gx[k]).sum(axis=1) + (dx2 * gx2[k]).sum(axis=1)) / B for k in gx}
    return value, dvals, cache


def loss_and_grad(model, X, x_w, y, cfg: TrainConfig, noise: np.ndarray | None = None, batch_index=None):
    """Mean batch loss (plus penalty) and its gradient with respect to ``model.params``.

    ``noise`` has shape (B, 2n); the first n columns drive x, the rest x'.
    """
    y = np.asarray(y, dtype=float)
    if cfg.loss == "analytic" and (model.family != "tn" or cfg.weight.kind != "constant"):
        raise ConfigurationError("the analytic loss is only available for TN models with the constant weight")
    if cfg.loss != "analytic" and noise is None:
        raise ValueError("sampled loss needs a noise block")
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            value, dvals, cache = _batch_terms(model, X, x_w, y, cfg, noise)
    except DomainError as exc:
        # parameters have left the range where the predictive law is defined
        raise TrainingDivergence(f"invalid predictive distribution: {exc}", batch=batch_index) from exc
    loss = float(value.mean())
    grads = model.backward(cache, dvals)
    pen, pen_grad = model.penalty()
    loss += pen
    for k, g in pen_grad.items():
        grads[k] = grads[k] + g
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDivergence("non-finite loss or gradient", batch=batch_index)
    return loss, grads


def evaluation_loss(model, ds: Dataset, cfg: TrainConfig, seed=None) -> float:
    """Loss of ``model`` on ``ds`` with fixed evaluation noise (no penalty)."""
    dist = model.predict(ds)
    if cfg.loss == "analytic":
        return float(np.mean(crps_tn(dist.loc, dist.scale, ds.obs)))
    seed = cfg.seed if seed is None else seed
    return mean_sampled_wcrps(dist, ds.obs, cfg.weight, n=cfg.val_samples, seed=[seed, 7919]).value


class EarlyStopping:
    """Track the best validation loss.

    ``update`` returns True once more than ``patience`` consecutive epochs
    have passed without improvement.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.best_params = None
        self.wait = 0

    def update(self, epoch: int, loss: float, params: dict) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            self.best_params = {k: v.copy() for k, v in params.items()}
            return False
        self.wait += 1
        return self.wait > self.patience


@dataclass
class TrainResult:
    model: object
    trace: list
    best_epoch: int | None = None
    stopped_epoch: int = 0


def _prepare(model, ds: Dataset):
    if model.norm_stats is None:
        model.norm_stats = compute_norm_stats(ds)
    nds = normalize(ds, model.norm_stats)
    return nds.predictors, nds.wind_raw, nds.obs


def _run_epoch(model, X, x_w, y, cfg: TrainConfig, state: OptimizerState, epoch: int, lr: float) -> float:
    N = len(y)
    perm = np.random.default_rng([cfg.seed, epoch]).permutation(N)
    total = 0.0
    for bi, start in enumerate(range(0, N, cfg.batch_size)):
        idx = perm[start:start + cfg.batch_size]
        noise = None if cfg.loss == "analytic" else batch_noise(cfg.seed, epoch, bi, len(idx), cfg.n_samples)
        try:
            loss, grads = loss_and_grad(model, X[idx], x_w[idx], y[idx], cfg, noise, batch_index=bi)
        except TrainingDivergence as exc:
            raise TrainingDivergence(exc.reason, epoch=epoch, batch=bi) from exc
        optimizer_step(state, model.params, grads, lr)
        model.project()
        total += loss * len(idx)
    return total / N


def train(model, ds: Dataset, cfg: TrainConfig, validation: Dataset | None = None) -> TrainResult:
    """Fit ``model`` (a copy is trained) on ``ds``.

    Mixture linear models first pre-train each component on its own for
    ``cfg.pretrain_epochs``.  With ``patience > 0`` the validation loss
    drives early stopping and the best-epoch parameters are returned;
    otherwise training stops once the best training loss has not improved by
    a relative ``converge_tol`` for ``converge_window`` epochs (or at
    ``max_epochs``).
    """
    if len(ds) == 0:
        raise ConfigurationError("training dataset is empty")
    if cfg.patience > 0 and validation is None:
        raise ConfigurationError("early stopping needs a validation dataset")
    model = model.copy()
    X, x_w, y = _prepare(model, ds)
    trace: list[dict] = []
    if cfg.max_epochs <= 0:
        return TrainResult(model, trace, None, 0)
    if isinstance(model, LinearModel) and is_mixture(model.family) and cfg.pretrain_epochs > 0:
        pretrain_components(model, ds, cfg)

    state = OptimizerState(cfg.optimizer)
    lr = cfg.learning_rate
    stopper = EarlyStopping(cfg.patience) if cfg.patience > 0 else None
    best_train, stale = np.inf, 0
    halved = False
    epoch = 0
    while epoch < cfg.max_epochs:
        epoch += 1
        snapshot = ({k: v.copy() for k, v in model.params.items()}, state.copy())
        try:
            train_loss = _run_epoch(model, X, x_w, y, cfg, state, epoch, lr)
        except TrainingDivergence as exc:
            if halved:
                raise
            log.warning("divergence in epoch %d; halving the learning rate and retrying", epoch)
            model.params, state = snapshot
            lr *= 0.5
            halved = True
            epoch -= 1
            continue
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": None, "lr": lr}
        if validation is not None:
            row["val_loss"] = evaluation_loss(model, validation, cfg)
        trace.append(row)
        log.debug("epoch %d train %.6f val %s", epoch, train_loss, row["val_loss"])
        if stopper is not None:
            if stopper.update(epoch, row["val_loss"], model.params):
                break
        elif cfg.until_converged:
            if train_loss < best_train * (1.0 - cfg.converge_tol):
                best_train, stale = train_loss, 0
            else:
                stale += 1
                if stale >= cfg.converge_window:
                    break
    best_epoch = None
    if stopper is not None and stopper.best_params is not None:
        model.params = stopper.best_params
        best_epoch = stopper.best_epoch
    model.metadata = {"config": cfg.to_dict(), "epochs": epoch, "best_epoch": best_epoch}
    return TrainResult(model, trace, best_epoch, epoch)


def pretrain_components(model: LinearModel, ds: Dataset, cfg: TrainConfig) -> None:
    """Initialize a linear mixture from separately trained single components."""
    first, second = components_of(model.family)
    sub_cfg = replace(cfg, max_epochs=cfg.pretrain_epochs, until_converged=False, patience=0, pretrain_epochs=0)
    m1 = LinearModel(first, norm_stats=model.norm_stats, registry=model.registry)
    m2 = LinearModel(second, norm_stats=model.norm_stats, registry=model.registry)
    r1 = train(m1, ds, replace(sub_cfg, seed=cfg.seed * 2 + 1))
    r2 = train(m2, ds, replace(sub_cfg, seed=cfg.seed * 2 + 2))
    model.params["a"], model.params["b"] = r1.model.params["a"].copy(), r1.model.params["b"].copy()
    model.params["a2"], model.params["b2"] = r2.model.params["a"].copy(), r2.model.params["b"].copy()
    if "xi" in model.params:
        model.params["xi"] = r2.model.params["xi"].copy()


def final_epoch_rule(best_epochs_per_fold) -> int:
    """Two thirds of the mean best epoch, rounded half up."""
    best = np.asarray(best_epochs_per_fold, dtype=float)
    if best.size == 0:
        raise ValueError("need at least one best epoch")
    return int(np.floor(2.0 / 3.0 * best.mean() + 0.5))


_BOUNDS = {"alpha": ALPHA_RANGE, "beta": BETA_RANGE, "static_w": (0.0, 1.0)}


def fit_full_batch(model, ds: Dataset, cfg: TrainConfig, max_iter: int = 500):
    """Minimize the loss over the whole dataset at once with L-BFGS-B.

    The sampled loss uses one fixed noise block (seeded by ``cfg.seed``), so
    the objective is deterministic.  Returns a trained copy of ``model``.
    """
    model = model.copy()
    X, x_w, y = _prepare(model, ds)
    noise = None if cfg.loss == "analytic" else batch_noise(cfg.seed, 0, 0, len(y), cfg.n_samples)
    keys = list(model.params)
    shapes = [model.params[k].shape for k in keys]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(theta):
        out, pos = {}, 0
        for k, shape, size in zip(keys, shapes, sizes):
            out[k] = theta[pos:pos + size].reshape(shape).copy()
            pos += size
        return out

    def objective(theta):
        model.params = unpack(theta)
        loss, grads = loss_and_grad(model, X, x_w, y, cfg, noise)
        return loss, np.concatenate([grads[k].ravel() for k in keys])

    bounds = []
    for k, size in zip(keys, sizes):
        bounds += [_BOUNDS.get(k, (None, None))] * size
    theta0 = np.concatenate([model.params[k].ravel() for k in keys])
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
    model.params = unpack(res.x)
    model.metadata = {"config": cfg.to_dict(), "full_batch": True, "iterations": int(res.nit),
                      "converged": bool(res.success)}
    return model

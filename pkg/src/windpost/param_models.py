"""Parameter models: predictors -> predictive distribution.

Both model kinds keep their trainable arrays in a ``params`` dict so the
optimizers can treat them uniformly.  ``forward`` returns the predictive
distribution together with a cache; ``backward`` maps derivatives of a loss
with respect to the per-record distribution parameters (keys ``loc``,
``scale``, ``shape`` or ``loc1``, ``scale1``, ``loc2``, ``scale2``,
``shape2``, ``weight`` for mixtures) back to the model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import PREDICTORS, WIND_INDEX, Dataset, NormStats, normalize
from .dists import GEV, MIN_SCALE, LogNormal, TruncNormal, mixture
from .errors import ConfigurationError

LINEAR_FAMILIES = ("tn", "ln", "gev", "mix_tn_ln", "mix_tn_gev", "amix_tn_ln", "amix_tn_gev")
DENSE_FAMILIES = ("tn", "ln", "mix_tn_ln")
ALPHA_RANGE = (4.0, 12.0)
BETA_RANGE = (-6.0, -0.6)

_SINGLE = {"tn": TruncNormal, "ln": LogNormal, "gev": GEV}


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return expit(np.asarray(z, dtype=float))


def _scale_from_raw(eta):
    """scale = sqrt(softplus(eta)) clamped at MIN_SCALE, with d scale / d eta."""
    raw_scale = np.sqrt(softplus(eta))
    scale = np.maximum(raw_scale, MIN_SCALE)
    dscale = np.where(raw_scale > MIN_SCALE, sigmoid(eta) / (2.0 * scale), 0.0)
    return scale, dscale


def components_of(family: str) -> tuple[str, ...]:
    if family in _SINGLE:
        return (family,)
    _, first, second = family.split("_")
    return first, second


def is_mixture(family: str) -> bool:
    return family.startswith(("mix_", "amix_"))


def dist_param_names(family: str) -> tuple[str, ...]:
    if not is_mixture(family):
        return ("loc", "scale", "shape") if family == "gev" else ("loc", "scale")
    second = components_of(family)[1]
    names = ["loc1", "scale1", "loc2", "scale2"]
    if second == "gev":
        names.append("shape2")
    return (*names, "weight")


def build_distribution(family: str, values: dict):
    """Assemble the predictive law from per-record parameter arrays."""
    if not is_mixture(family):
        if family == "gev":
            return GEV(values["loc"], values["scale"], values["shape"])
        return _SINGLE[family](values["loc"], values["scale"])
    first, second = components_of(family)
    c1 = _SINGLE[first](values["loc1"], values["scale1"])
    if second == "gev":
        c2 = GEV(values["loc2"], values["scale2"], values["shape2"])
    else:
        c2 = _SINGLE[second](values["loc2"], values["scale2"])
    return mixture(c1, c2, values["weight"], adaptive=family.startswith("amix_"))


def adaptive_weight(alpha: float, beta: float, x_w):
    """Weight of the first (bulk) component: sigmoid(alpha + beta * x_w)."""
    return sigmoid(alpha + beta * np.asarray(x_w, dtype=float))


@dataclass
class LinearEmosParams:
    """Coefficient vectors of the linear model; unused entries stay None."""

    a: np.ndarray
    b: np.ndarray
    a2: np.ndarray | None = None
    b2: np.ndarray | None = None
    alpha: float | None = None
    beta: float | None = None
    static_w: float | None = None
    xi: float | None = None

    def as_dict(self) -> dict:
        return {k: np.atleast_1d(np.asarray(v, dtype=float)).copy() for k, v in vars(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearEmosParams":
        scalars = ("alpha", "beta", "static_w", "xi")
        kw = {k: (float(np.asarray(v).ravel()[0]) if k in scalars else np.asarray(v, dtype=float)) for k, v in d.items()}
        return cls(**kw)


def linear_param_keys(family: str) -> tuple[str, ...]:
    keys = ["a", "b"]
    if is_mixture(family):
        keys += ["a2", "b2"]
    if "gev" in components_of(family):
        keys.append("xi")
    if family.startswith("amix_"):
        keys += ["alpha", "beta"]
    elif family.startswith("mix_"):
        keys.append("static_w")
    return tuple(keys)


def init_linear_params(family: str, n_predictors: int = len(PREDICTORS)) -> dict:
    """Fixed initialization: all coefficients 1, xi 0.3, static weight 0.5,
    adaptive alpha 5 and beta -1."""
    if family not in LINEAR_FAMILIES:
        raise ConfigurationError(f"unknown linear family {family!r}; choose from {LINEAR_FAMILIES}")
    init = {
        "a": np.ones(n_predictors + 1),
        "b": np.ones(n_predictors + 1),
        "a2": np.ones(n_predictors + 1),
        "b2": np.ones(n_predictors + 1),
        "alpha": np.array([5.0]),
        "beta": np.array([-1.0]),
        "static_w": np.array([0.5]),
        "xi": np.array([0.3]),
    }
    return {k: init[k] for k in linear_param_keys(family)}


def linear_forward(p: LinearEmosParams | dict, x, family: str, x_w=None):
    """Predictive distribution of the linear model for one or many predictor rows.

    ``x`` holds standardized predictors; ``x_w`` is the raw wind forecast
    (only needed by adaptive mixtures).
    """
    params = p.as_dict() if isinstance(p, LinearEmosParams) else p
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x_w is None:
        x_w = np.zeros(len(x))
    dist, _ = _linear_forward(params, family, x, np.atleast_1d(np.asarray(x_w, dtype=float)))
    return dist


def _check_arity(params: dict, family: str, n_features: int) -> None:
    needed = linear_param_keys(family)
    missing = [k for k in needed if k not in params]
    if missing:
        raise ConfigurationError(f"family {family!r} needs parameters {missing}")
    for k in ("a", "b", "a2", "b2"):
        if k in needed and len(params[k]) != n_features + 1:
            raise ConfigurationError(f"coefficient vector {k!r} has length {len(params[k])}, expected {n_features + 1}")


def _linear_forward(params: dict, family: str, X, x_w, column: bool = False):
    _check_arity(params, family, X.shape[1])
    design = np.column_stack([np.ones(len(X)), X])
    values, cache = {}, {"design": design, "x_w": x_w}

    def head(a_key, b_key, suffix):
        loc = design @ params[a_key]
        scale, dscale = _scale_from_raw(design @ params[b_key])
        values["loc" + suffix] = loc
        values["scale" + suffix] = scale
        cache["dscale" + suffix] = dscale

    if not is_mixture(family):
        head("a", "b", "")
        if family == "gev":
            values["shape"] = np.full(len(X), params["xi"][0])
    else:
        head("a", "b", "1")
        head("a2", "b2", "2")
        if components_of(family)[1] == "gev":
            values["shape2"] = np.full(len(X), params["xi"][0])
        if family.startswith("amix_"):
            w = adaptive_weight(params["alpha"][0], params["beta"][0], x_w)
        else:
            w = np.full(len(X), params["static_w"][0])
        cache["w"] = w
        values["weight"] = w
    if column:
        values = {k: v[:, None] for k, v in values.items()}
    return build_distribution(family, values), cache


class LinearModel:
    """EMOS-style model: location and softplus-variance linear in the predictors."""

    kind = "linear"

    def __init__(self, family: str, params: dict | None = None, norm_stats: NormStats | None = None,
                 registry: tuple = PREDICTORS):
        if family not in LINEAR_FAMILIES:
            raise ConfigurationError(f"unknown linear family {family!r}; choose from {LINEAR_FAMILIES}")
        self.family = family
        self.params = params if params is not None else init_linear_params(family, len(registry))
        self.norm_stats = norm_stats
        self.registry = tuple(registry)
        self.metadata: dict = {}

    def copy(self) -> "LinearModel":
        m = LinearModel(self.family, {k: v.copy() for k, v in self.params.items()}, self.norm_stats, self.registry)
        m.metadata = dict(self.metadata)
        return m

    def forward(self, X, x_w, column: bool = False):
        return _linear_forward(self.params, self.family, np.asarray(X, float), np.asarray(x_w, float), column)

    def backward(self, cache: dict, dvals: dict) -> dict:
        design = cache["design"]
        grads = {}

        def head(a_key, b_key, suffix):
            grads[a_key] = design.T @ dvals["loc" + suffix]
            grads[b_key] = design.T @ (dvals["scale" + suffix] * cache["dscale" + suffix])

        if not is_mixture(self.family):
            head("a", "b", "")
            if self.family == "gev":
                grads["xi"] = np.array([dvals["shape"].sum()])
            return grads
        head("a", "b", "1")
        head("a2", "b2", "2")
        if "xi" in self.params:
            grads["xi"] = np.array([dvals["shape2"].sum()])
        if self.family.startswith("amix_"):
            w = cache["w"]
            dz = dvals["weight"] * w * (1.0 - w)
            grads["alpha"] = np.array([dz.sum()])
            grads["beta"] = np.array([(dz * cache["x_w"]).sum()])
        else:
            grads["static_w"] = np.array([dvals["weight"].sum()])
        return grads

    def penalty(self) -> tuple[float, dict]:
        return 0.0, {}

    def project(self) -> None:
        project_constraints(self.params)

    def predict(self, ds: Dataset):
        X, x_w = model_inputs(self, ds)
        return self.forward(X, x_w)[0]

    def to_dict(self) -> dict:
        return _artifact(self, {})


def project_constraints(params):
    """Clamp alpha, beta and the static mixture weight to their feasible ranges in place."""
    target = params.as_dict() if isinstance(params, LinearEmosParams) else params
    if "alpha" in target:
        np.clip(target["alpha"], *ALPHA_RANGE, out=target["alpha"])
    if "beta" in target:
        np.clip(target["beta"], *BETA_RANGE, out=target["beta"])
    if "static_w" in target:
        np.clip(target["static_w"], 0.0, 1.0, out=target["static_w"])
    if isinstance(params, LinearEmosParams):
        return LinearEmosParams.from_dict(target)
    return target


# dense model

_DENSE_ARITY = {"tn": 2, "ln": 2, "mix_tn_ln": 5}


@dataclass
class DenseConfig:
    layers: int = 2
    units: int = 170
    l2: float = 0.031658

    def __post_init__(self):
        if not 1 <= self.layers <= 5:
            raise ConfigurationError("dense layers must be between 1 and 5")
        if self.units < 1:
            raise ConfigurationError("units must be positive")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be nonnegative")


def init_dense_params(cfg: DenseConfig, n_inputs: int, family: str, seed: int = 0) -> dict:
    """He-uniform fan-in initialization; biases zero."""
    if family not in DENSE_FAMILIES:
        raise ConfigurationError(f"dense models support {DENSE_FAMILIES}, got {family!r}")
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = n_inputs
    for i in range(cfg.layers):
        limit = np.sqrt(6.0 / fan_in)
        params[f"W{i}"] = rng.uniform(-limit, limit, (fan_in, cfg.units))
        params[f"c{i}"] = np.zeros(cfg.units)
        fan_in = cfg.units
    limit = np.sqrt(6.0 / (fan_in + 1))
    params["Wout"] = rng.uniform(-limit, limit, (fan_in + 1, _DENSE_ARITY[family]))
    params["cout"] = np.zeros(_DENSE_ARITY[family])
    return params


class DenseModel:
    """ReLU network on the standardized predictors.

    The raw wind forecast is appended to the last hidden layer, so the output
    layer can pass it straight to the location.
    """

    kind = "dense"

    def __init__(self, family: str, cfg: DenseConfig | None = None, params: dict | None = None,
                 norm_stats: NormStats | None = None, registry: tuple = PREDICTORS, seed: int = 0):
        if family not in DENSE_FAMILIES:
            raise ConfigurationError(f"dense models support {DENSE_FAMILIES}, got {family!r}")
        self.family = family
        self.cfg = cfg or DenseConfig()
        self.registry = tuple(registry)
        self.params = params if params is not None else init_dense_params(self.cfg, len(registry), family, seed)
        self.norm_stats = norm_stats
        self.metadata: dict = {}
        self._check_arity()

    def _check_arity(self):
        n_out = self.params["Wout"].shape[1]
        if n_out != _DENSE_ARITY[self.family]:
            raise ConfigurationError(
                f"output layer has {n_out} units but family {self.family!r} needs {_DENSE_ARITY[self.family]}"
            )
        if self.params["Wout"].shape[0] != self.cfg.units + 1:
            raise ConfigurationError("output layer does not match hidden width plus skip input")

    def copy(self) -> "DenseModel":
        m = DenseModel(self.family, self.cfg, {k: v.copy() for k, v in self.params.items()}, self.norm_stats,
                       self.registry)
        m.metadata = dict(self.metadata)
        return m

    def forward(self, X, x_w, column: bool = False):
        X = np.asarray(X, float)
        if X.shape[1] != self.params["W0"].shape[0]:
            raise ConfigurationError(f"model expects {self.params['W0'].shape[0]} predictors, got {X.shape[1]}")
        acts = [X]
        h = X
        for i in range(self.cfg.layers):
            h = np.maximum(h @ self.params[f"W{i}"] + self.params[f"c{i}"], 0.0)
            acts.append(h)
        hc = np.column_stack([h, np.asarray(x_w, float)])
        out = hc @ self.params["Wout"] + self.params["cout"]
        cache = {"acts": acts, "hc": hc}
        values = {}
        if self.family in ("tn", "ln"):
            values["loc"] = out[:, 0]
            values["scale"], cache["dscale"] = _scale_from_raw(out[:, 1])
        else:
            values["loc1"] = out[:, 0]
            values["scale1"], cache["dscale1"] = _scale_from_raw(out[:, 1])
            values["loc2"] = out[:, 2]
            values["scale2"], cache["dscale2"] = _scale_from_raw(out[:, 3])
            values["weight"] = cache["w"] = sigmoid(out[:, 4])
        if column:
            values = {k: v[:, None] for k, v in values.items()}
        return build_distribution(self.family, values), cache

    def backward(self, cache: dict, dvals: dict) -> dict:
        if self.family in ("tn", "ln"):
            dout = np.column_stack([dvals["loc"], dvals["scale"] * cache["dscale"]])
        else:
            w = cache["w"]
            dout = np.column_stack([
                dvals["loc1"], dvals["scale1"] * cache["dscale1"],
                dvals["loc2"], dvals["scale2"] * cache["dscale2"],
                dvals["weight"] * w * (1.0 - w),
            ])
        grads = {"Wout": cache["hc"].T @ dout, "cout": dout.sum(axis=0)}
        dh = dout @ self.params["Wout"][:-1].T
        acts = cache["acts"]
        for i in reversed(range(self.cfg.layers)):
            dz = dh * (acts[i + 1] > 0.0)
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"c{i}"] = dz.sum(axis=0)
            if i:
                dh = dz @ self.params[f"W{i}"].T
        return grads

    def penalty(self) -> tuple[float, dict]:
        return l2_penalty(self), {
            f"W{i}": 2.0 * self.cfg.l2 * self.params[f"W{i}"] for i in range(self.cfg.layers)
        }

    def project(self) -> None:
        pass

    def predict(self, ds: Dataset):
        X, x_w = model_inputs(self, ds)
        return self.forward(X, x_w)[0]

    def to_dict(self) -> dict:
        return _artifact(self, {"dense": vars(self.cfg).copy()})


def dense_forward(model: DenseModel, x, x_w, family: str | None = None):
    if family is not None and family != model.family:
        raise ConfigurationError(f"model was built for {model.family!r}, not {family!r}")
    return model.forward(np.atleast_2d(x), np.atleast_1d(x_w))[0]


def l2_penalty(model: DenseModel) -> float:
    """l2 times the squared hidden-layer weights; biases and the output layer are not penalized."""
    if model.cfg.l2 == 0:
        return 0.0
    return model.cfg.l2 * float(sum(np.sum(model.params[f"W{i}"] ** 2) for i in range(model.cfg.layers)))


# shared helpers


def model_inputs(model, ds: Dataset):
    """Standardized predictor matrix and raw wind forecast for ``model``."""
    if tuple(ds.names) != tuple(model.registry):
        raise ConfigurationError(f"predictor registry mismatch: model {model.registry}, data {tuple(ds.names)}")
    if model.norm_stats is None:
        raise ConfigurationError("model has no normalization statistics")
    return normalize(ds, model.norm_stats).predictors, ds.wind_raw


def make_model(kind: str, family: str, dense: DenseConfig | None = None, seed: int = 0):
    if kind == "linear":
        return LinearModel(family)
    if kind == "dense":
        return DenseModel(family, dense, seed=seed)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def _artifact(model, extra: dict) -> dict:
    return {
        "model_kind": model.kind,
        "family": model.family,
        "registry": list(model.registry),
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
        "params": {k: v.tolist() for k, v in model.params.items()},
        "training": model.metadata,
        **extra,
    }


def model_from_dict(d: dict):
    params = {k: np.asarray(v, dtype=float) for k, v in d["params"].items()}
    stats = None if d.get("norm_stats") is None else NormStats.from_dict(d["norm_stats"])
    registry = tuple(d.get("registry", PREDICTORS))
    if d["model_kind"] == "linear":
        m = LinearModel(d["family"], params, stats, registry)
    elif d["model_kind"] == "dense":
        m = DenseModel(d["family"], DenseConfig(**d["dense"]), params, stats, registry)
    else:
        raise ConfigurationError(f"unknown model kind {d['model_kind']!r}")
    m.metadata = d.get("training", {})
    return m




@dataclass
class ModelSpec:
    """What to build: model kind, distribution family and dense hyperparameters."""

    kind: str = "linear"
    family: str = "tn"
    dense: DenseConfig | None = None

    def __post_init__(self):
        if isinstance(self.dense, dict):
            self.dense = DenseConfig(**self.dense)
        families = LINEAR_FAMILIES if self.kind == "linear" else DENSE_FAMILIES
        if self.kind not in ("linear", "dense"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.family not in families:
            raise ConfigurationError(f"{self.kind} models support {families}, got {self.family!r}")

    def build(self, seed: int = 0):
        return make_model(self.kind, self.family, self.dense, seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "family": self.family, "dense": None if self.dense is None else vars(self.dense).copy()}


__all__ = [
    "ModelSpec",
    "ALPHA_RANGE", "BETA_RANGE", "DENSE_FAMILIES", "DenseConfig", "DenseModel", "LINEAR_FAMILIES",
    "LinearEmosParams", "LinearModel", "WIND_INDEX", "adaptive_weight", "build_distribution",
    "dense_forward", "dist_param_names", "init_linear_params", "l2_penalty", "linear_forward",
    "make_model", "model_from_dict", "model_inputs", "project_constraints", "sigmoid", "softplus",
]

"""Parametric predictive distributions for nonnegative wind speed.

All families are immutable dataclasses whose parameters may be scalars or
broadcastable numpy arrays, so one object can describe a whole batch of
forecasts.  Sampling uses the inverse-cdf reparametrization: a block of
uniform noise is pushed through the quantile function, which makes each
sample a smooth function of the distribution parameters.

Besides the public ``cdf``/``pdf``/``quantile``/``sample`` methods each
family exposes two private helpers used by the training code:

``_quantile_grad(u)``
    quantile values together with their derivatives with respect to the
    family's own parameters (pathwise derivatives for fixed noise).
``_cdf_grad(x)``
    derivatives of the cdf with respect to the parameters at fixed ``x``;
    mixtures use these for implicit differentiation of the composite
    quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp

from .errors import DomainError

GUMBEL_SWITCH = 1e-6
MIN_SCALE = 1e-6
_SQRT_2PI = np.sqrt(2.0 * np.pi)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def _check_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("evaluation point must be finite")
    return x


def _check_prob(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("probability must lie strictly inside (0, 1)")
    return p


def _as_param(value) -> Any:
    arr = np.asarray(value, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


def _validate_loc_scale(loc, scale) -> None:
    if not np.all(np.isfinite(loc)):
        raise DomainError("loc must be finite")
    if not np.all(np.asarray(scale) > 0.0):
        raise DomainError("scale must be strictly positive")


@dataclass(frozen=True)
class NoiseBlock:
    """Uniform base draws for reparametrized sampling.

    ``values`` lie strictly inside (0, 1); the last axis indexes samples.
    """

    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all((v > 0.0) & (v < 1.0)):
            raise DomainError("noise values must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def draw(cls, n: int, seed, batch: int | None = None) -> "NoiseBlock":
        rng = np.random.default_rng(seed)
        shape = (n,) if batch is None else (batch, n)
        return cls(uniform_noise(rng, shape), seed=seed if isinstance(seed, int) else None)


def uniform_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    # random() returns k / 2**53; the half-step offset excludes both endpoints
    return rng.random(shape) + 2.0**-54


class ForecastDistribution:
    """Base class; subclasses are frozen dataclasses."""

    family: str = ""

    def cdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def quantile(self, p):
        raise NotImplementedError

    def sample(self, noise) -> np.ndarray:
        u = noise.values if isinstance(noise, NoiseBlock) else np.asarray(noise, dtype=float)
        return self._quantile(u)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def _quantile(self, u):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class TruncNormal(ForecastDistribution):
    """Normal law with location ``loc`` and scale ``scale`` truncated to [0, inf)."""

    loc: Any
    scale: Any
    family = "TruncNormal"

    def __post_init__(self):
        object.__setattr__(self, "loc", _as_param(self.loc))
        object.__setattr__(self, "scale", _as_param(self.scale))
        _validate_loc_scale(self.loc, self.scale)

    @property
    def _r(self):
        return self.loc / self.scale

    def cdf(self, x):
        x = _check_finite(x)
        s = (self.loc - x) / self.scale
        # 1 - Phi(s)/Phi(r), computed in log space so deep truncation stays accurate
        val = -np.expm1(log_ndtr(s) - log_ndtr(self._r))
        return np.where(x < 0.0, 0.0, np.clip(val, 0.0, 1.0))

    def sf(self, x):
        x = _check_finite(x)
        val = np.exp(log_ndtr((self.loc - x) / self.scale) - log_ndtr(self._r))
        return np.where(x < 0.0, 1.0, np.clip(val, 0.0, 1.0))

    def pdf(self, x):
        x = _check_finite(x)
        z = (x - self.loc) / self.scale
        logpdf = -0.5 * z * z - _LOG_SQRT_2PI - np.log(self.scale) - log_ndtr(self._r)
        return np.where(x < 0.0, 0.0, np.exp(logpdf))

    def quantile(self, p):
        return self._quantile(_check_prob(p))

    def _k(self, u):
        # standard-normal point whose lower mass equals (1 - u) * Phi(r)
        r = self._r
        if np.all(r > -5.0):
            return ndtri((1.0 - u) * ndtr(r))  # faster, and accurate while Phi(r) is not tiny
        return ndtri_exp(np.log1p(-u) + log_ndtr(r))

    def _quantile(self, u):
        return np.maximum(self.loc - self.scale * self._k(u), 0.0)

    def _quantile_grad(self, u):
        r = self._r
        k = self._k(u)
        x = np.maximum(self.loc - self.scale * k, 0.0)
        ratio = (1.0 - u) * np.exp(0.5 * (k * k - r * r))
        return x, {"loc": 1.0 - ratio, "scale": -k + ratio * r}

    def _cdf_grad(self, x):
        r = self._r
        s = (self.loc - x) / self.scale
        lr = log_ndtr(r)
        q = np.exp(log_ndtr(s) - lr)
        dq_ds = np.exp(-0.5 * s * s - _LOG_SQRT_2PI - lr)
        dq_dr = -q * np.exp(-0.5 * r * r - _LOG_SQRT_2PI - lr)
        inside = x >= 0.0
        dloc = np.where(inside, -(dq_ds + dq_dr) / self.scale, 0.0)
        dscale = np.where(inside, (dq_ds * s + dq_dr * r) / self.scale, 0.0)
        return {"loc": dloc, "scale": dscale}

    def to_dict(self) -> dict:
        return {"family": self.family, "loc": _jsonable(self.loc), "scale": _jsonable(self.scale)}


@dataclass(frozen=True)
class LogNormal(ForecastDistribution):
    """Log-normal law; ``loc``/``scale`` are mean and std of the log."""

    loc: Any
    scale: Any
    family = "LogNormal"

    def __post_init__(self):
        object.__setattr__(self, "loc", _as_param(self.loc))
        object.__setattr__(self, "scale", _as_param(self.scale))
        _validate_loc_scale(self.loc, self.scale)

    def _z(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.log(np.where(x > 0.0, x, 1.0)) - self.loc) / self.scale

    def cdf(self, x):
        x = _check_finite(x)
        return np.where(x > 0.0, ndtr(self._z(x)), 0.0)

    def pdf(self, x):
        x = _check_finite(x)
        z = self._z(x)
        safe_x = np.where(x > 0.0, x, 1.0)
        return np.where(x > 0.0, _norm_pdf(z) / (safe_x * self.scale), 0.0)

    def quantile(self, p):
        return self._quantile(_check_prob(p))

    def _quantile(self, u):
        return np.exp(self.loc + self.scale * ndtri(u))

    def _quantile_grad(self, u):
        z = ndtri(u)
        x = np.exp(self.loc + self.scale * z)
        return x, {"loc": x, "scale": x * z}

    def _cdf_grad(self, x):
        z = self._z(x)
        dens = np.where(x > 0.0, _norm_pdf(z), 0.0)
        return {"loc": -dens / self.scale, "scale": -dens * z / self.scale}

    def to_dict(self) -> dict:
        return {"family": self.family, "loc": _jsonable(self.loc), "scale": _jsonable(self.scale)}


@dataclass(frozen=True)
class GEV(ForecastDistribution):
    """Generalized extreme value law, cdf exp(-(1 + shape*z)^(-1/shape)).

    Positive ``shape`` is the heavy-tailed Frechet type.  For
    ``|shape| < GUMBEL_SWITCH`` the Gumbel limit exp(-exp(-z)) is used.  The
    support is not truncated at zero.
    """

    loc: Any
    scale: Any
    shape: Any = 0.0
    family = "GEV"

    def __post_init__(self):
        object.__setattr__(self, "loc", _as_param(self.loc))
        object.__setattr__(self, "scale", _as_param(self.scale))
        object.__setattr__(self, "shape", _as_param(self.shape))
        _validate_loc_scale(self.loc, self.scale)
        if not np.all(np.isfinite(self.shape)):
            raise ValueError("shape must be finite")

    def _parts(self, x):
        """Return (z, t, T, inside, gumbel, xi_safe) with t = 1 + xi z and T = t**(-1/xi).

        For |xi| below GUMBEL_SWITCH the Gumbel form exp(-z) is used, carried
        to second order in xi so values stay continuous across the switch.
        """
        xi = np.asarray(self.shape, dtype=float)
        z = (x - self.loc) / self.scale
        gumbel = np.abs(xi) < GUMBEL_SWITCH
        xi_safe = np.where(gumbel, 1.0, xi)
        t = 1.0 + xi * z
        inside = t > 0.0
        t_safe = np.where(inside, t, 1.0)
        with np.errstate(over="ignore"):
            log_T_gumbel = -z * (1.0 - xi * z / 2.0 + xi * xi * z * z / 3.0)
            T = np.where(gumbel, np.exp(log_T_gumbel), np.exp(-np.log(t_safe) / xi_safe))
        return z, t_safe, T, inside, gumbel, xi_safe

    def cdf(self, x):
        x = _check_finite(x)
        z, t, T, inside, gumbel, _ = self._parts(x)
        outside_val = np.where(np.asarray(self.shape) > 0.0, 0.0, 1.0)
        return np.where(inside, np.exp(-T), outside_val)

    def pdf(self, x):
        x = _check_finite(x)
        z, t, T, inside, gumbel, _ = self._parts(x)
        with np.errstate(over="ignore", invalid="ignore"):
            dens = T * np.exp(-T) / (t * self.scale)
        dens = np.where(np.isfinite(dens), dens, 0.0)
        return np.where(inside, dens, 0.0)

    def quantile(self, p):
        return self._quantile(_check_prob(p))

    def _std_quantile(self, u):
        xi = np.asarray(self.shape, dtype=float)
        ell = np.log(-np.log(u))
        gumbel = np.abs(xi) < GUMBEL_SWITCH
        xi_safe = np.where(gumbel, 1.0, xi)
        z = np.where(gumbel, -ell * (1.0 - xi * ell / 2.0 + xi * xi * ell * ell / 6.0), np.expm1(-xi * ell) / xi_safe)
        return z, ell, xi, gumbel, xi_safe

    def _quantile(self, u):
        z = self._std_quantile(u)[0]
        return self.loc + self.scale * z

    def _quantile_grad(self, u):
        z, ell, xi, gumbel, xi_safe = self._std_quantile(u)
        x = self.loc + self.scale * z
        series = np.abs(xi) < 1e-4
        closed = (-ell * xi * np.exp(-xi * ell) - np.expm1(-xi * ell)) / np.where(series, 1.0, xi_safe) ** 2
        taylor = ell**2 / 2.0 - xi * ell**3 / 3.0 + xi**2 * ell**4 / 8.0
        dz_dxi = np.where(series, taylor, closed)
        ones = np.ones_like(x)
        return x, {"loc": ones, "scale": z * ones, "shape": self.scale * dz_dxi}

    def _cdf_grad(self, x):
        z, t, T, inside, gumbel, xi_safe = self._parts(x)
        F = np.exp(-T)
        dT_dloc = T / (self.scale * t)
        dT_dscale = T * z / (self.scale * t)
        xi = np.asarray(self.shape, dtype=float)
        series = T * z * z * (0.5 - 2.0 * xi * z / 3.0)
        dT_dshape = np.where(gumbel, series, T * (np.log(t) / xi_safe**2 - z / (xi_safe * t)))
        with np.errstate(invalid="ignore"):
            out = {
                "loc": -F * dT_dloc,
                "scale": -F * dT_dscale,
                "shape": -F * dT_dshape,
            }
        return {k: np.where(inside & np.isfinite(v), v, 0.0) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "loc": _jsonable(self.loc),
            "scale": _jsonable(self.scale),
            "shape": _jsonable(self.shape),
        }


@dataclass(frozen=True)
class Mixture(ForecastDistribution):
    """Finite mixture: cdf(x) = sum_k weights[k] * components[k].cdf(x).

    Two-component mixtures are the usual case (``weight`` is then the weight
    of the first component); bagged forecasts use K equal weights.  The
    ``adaptive`` flag only records that the weight came from a predictor
    dependent sigmoid.
    """

    components: tuple
    weights: tuple
    adaptive: bool = False
    bisect_tol: float = 1e-9

    def __post_init__(self):
        comps = tuple(self.components)
        ws = tuple(_as_param(w) for w in self.weights)
        if len(comps) < 1 or len(comps) != len(ws):
            raise ValueError("mixture needs one weight per component")
        for w in ws:
            if not np.all((np.asarray(w) >= 0.0) & (np.asarray(w) <= 1.0)):
                raise ValueError("mixture weights must lie in [0, 1]")
        total = sum(np.asarray(w) for w in ws)
        if not np.allclose(total, 1.0, atol=1e-9):
            raise ValueError("mixture weights must sum to one")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", ws)

    @property
    def family(self) -> str:  # type: ignore[override]
        return "AdaptiveMixtureResolved" if self.adaptive else "Mixture"

    @property
    def weight(self):
        return self.weights[0]

    def cdf(self, x):
        x = _check_finite(x)
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def pdf(self, x):
        x = _check_finite(x)
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def quantile(self, p):
        return self._quantile(_check_prob(p))

    def _quantile(self, u):
        u = np.asarray(u, dtype=float)
        qs = [c._quantile(u) for c in self.components]
        lo = np.minimum.reduce(qs) if len(qs) > 1 else qs[0]
        hi = np.maximum.reduce(qs) if len(qs) > 1 else qs[0]
        lo, hi = np.broadcast_arrays(lo, hi)
        lo, hi = lo.copy(), hi.copy()
        width = float(np.max(hi - lo)) if lo.size else 0.0
        # the mixture quantile is bracketed by the component quantiles at u
        if not np.isfinite(width):
            n_iter = 200
        else:
            n_iter = int(np.ceil(np.log2(width / self.bisect_tol))) + 1 if width > self.bisect_tol else 0
        for _ in range(min(n_iter, 200)):
            mid = 0.5 * (lo + hi)
            below = self._cdf_unchecked(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x = 0.5 * (lo + hi)
        # safeguarded Newton polish to near machine precision
        for _ in range(3):
            f = self._pdf_unchecked(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = (self._cdf_unchecked(x) - u) / f
            cand = x - step
            ok = np.isfinite(cand) & (cand >= lo - 1e-9) & (cand <= hi + 1e-9)
            x = np.where(ok, cand, x)
        return x

    def _cdf_unchecked(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def _pdf_unchecked(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def _quantile_grad(self, u):
        x = self._quantile(u)
        dens = self._pdf_unchecked(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(dens > 0.0, 1.0 / dens, 0.0)
        comp_grads = []
        weight_grads = []
        for w, c in zip(self.weights, self.components):
            cg = c._cdf_grad(x)
            comp_grads.append({k: -w * v * inv for k, v in cg.items()})
            weight_grads.append(-c.cdf(x) * inv)
        return x, {"components": comp_grads, "weights": weight_grads}

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if len(self.components) == 2:
            out["weight"] = _jsonable(self.weights[0])
        else:
            out["weights"] = [_jsonable(w) for w in self.weights]
        out["components"] = [c.to_dict() for c in self.components]
        return out


def mixture(first: ForecastDistribution, second: ForecastDistribution, weight, adaptive=False) -> Mixture:
    """Two-component mixture with ``weight`` on ``first``."""
    w = _as_param(weight)
    return Mixture((first, second), (w, 1.0 - np.asarray(w) if np.ndim(w) else 1.0 - w), adaptive=adaptive)


def _jsonable(v):
    arr = np.asarray(v)
    return float(arr) if arr.ndim == 0 else arr.tolist()


def from_dict(d: dict) -> ForecastDistribution:
    """Inverse of ``to_dict``."""
    fam = d["family"]
    if fam == "TruncNormal":
        return TruncNormal(d["loc"], d["scale"])
    if fam == "LogNormal":
        return LogNormal(d["loc"], d["scale"])
    if fam == "GEV":
        return GEV(d["loc"], d["scale"], d.get("shape", 0.0))
    if fam in ("Mixture", "AdaptiveMixtureResolved"):
        comps = tuple(from_dict(c) for c in d["components"])
        adaptive = fam == "AdaptiveMixtureResolved"
        if "weights" in d:
            return Mixture(comps, tuple(d["weights"]), adaptive=adaptive)
        return mixture(comps[0], comps[1], d["weight"], adaptive=adaptive)
    raise ValueError(f"unknown distribution family {fam!r}")


# functional spellings of the methods


def cdf(d: ForecastDistribution, x):
    return d.cdf(x)


def pdf(d: ForecastDistribution, x):
    return d.pdf(x)


def quantile(d: ForecastDistribution, p):
    return d.quantile(p)


def sample_reparam(d: ForecastDistribution, noise: NoiseBlock) -> np.ndarray:
    """Inverse-cdf samples ``quantile(d, u)`` for every ``u`` in the noise block."""
    return d.sample(noise)


def _map_params(d: ForecastDistribution, fn) -> ForecastDistribution:
    if isinstance(d, Mixture):
        return replace(d, components=tuple(_map_params(c, fn) for c in d.components),
                       weights=tuple(fn(w) for w in d.weights))
    names = ("loc", "scale", "shape") if isinstance(d, GEV) else ("loc", "scale")
    return replace(d, **{k: fn(getattr(d, k)) for k in names})


def take(d: ForecastDistribution, index) -> ForecastDistribution:
    """Sub-batch of a vectorized distribution (scalar parameters are kept)."""
    return _map_params(d, lambda v: v[index] if np.ndim(v) else v)


def as_column(d: ForecastDistribution) -> ForecastDistribution:
    """Reshape 1-D parameters to (B, 1) so they broadcast against sample blocks."""
    return _map_params(d, lambda v: np.asarray(v)[:, None] if np.ndim(v) == 1 else v)


def clamp_scale(scale):
    return np.maximum(scale, MIN_SCALE)

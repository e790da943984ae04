"""Test-set verification: Brier skill curves, reliability, climatology."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .dists import TruncNormal
from .errors import ConfigurationError, WindpostError
from .scoring import PRESETS, WeightFunction, crps_tn, mean_sampled_wcrps

DEFAULT_THRESHOLDS = np.round(np.arange(0.0, 20.0 + 1e-9, 0.5), 10)
RELIABILITY_THRESHOLDS = (5.0, 12.0)
MIN_EXCEEDANCES = 10


class UnknownStationError(WindpostError, LookupError):
    pass


@dataclass
class Climatology:
    """Per-station empirical distribution of training observations."""

    obs: dict[str, np.ndarray]

    def __post_init__(self):
        clean = {}
        for station, values in self.obs.items():
            values = np.sort(np.asarray(values, dtype=float))
            if values.size == 0:
                raise ConfigurationError(f"station {station!r} has no observations")
            clean[str(station)] = values
        self.obs = clean

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "Climatology":
        stations = np.asarray(ds.station).astype(str)
        return cls({s: ds.obs[stations == s] for s in np.unique(stations)})

    def sample_for(self, station) -> np.ndarray:
        try:
            return self.obs[str(station)]
        except KeyError:
            raise UnknownStationError(f"no climatology for station {station!r}") from None

    def prob_exceed(self, station, threshold):
        values = self.sample_for(station)
        above = values.size - np.searchsorted(values, threshold, side="right")
        return above / values.size

    def exceed_matrix(self, stations, thresholds) -> np.ndarray:
        stations = np.asarray(stations).astype(str)
        thresholds = np.asarray(thresholds, dtype=float)
        out = np.empty((len(stations), len(thresholds)))
        for s in np.unique(stations):
            rows = stations == s
            out[rows] = self.prob_exceed(s, thresholds)[None, :]
        return out

    def to_dict(self) -> dict:
        return {"climatology": {s: v.tolist() for s, v in self.obs.items()}}


def climatology_prob_exceed(c: Climatology, station, threshold) -> float:
    return float(c.prob_exceed(station, threshold))


def _crps_ensemble(sorted_x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact CRPS of the empirical law of ``sorted_x`` for each observation in y."""
    n = sorted_x.size
    csum = np.concatenate([[0.0], np.cumsum(sorted_x)])
    k = np.searchsorted(sorted_x, y, side="right")
    mean_abs = (y * k - csum[k] + (csum[-1] - csum[k]) - y * (n - k)) / n
    i = np.arange(1, n + 1)
    spread = 2.0 * np.sum((2 * i - n - 1) * sorted_x) / n**2
    return mean_abs - 0.5 * spread


# --- forecasters: anything with per-record exceedance probabilities and scores


def exceedance_matrix(forecaster, ds: Dataset, thresholds, dist=None) -> np.ndarray:
    """P(Y > t) for every record (rows) and threshold (columns)."""
    thresholds = np.asarray(thresholds, dtype=float)
    if isinstance(forecaster, Climatology):
        return forecaster.exceed_matrix(ds.station, thresholds)
    dist = forecaster.predict(ds) if dist is None else dist
    out = np.empty((len(ds.obs), len(thresholds)))
    for j, t in enumerate(thresholds):
        out[:, j] = 1.0 - dist.cdf(np.full(len(ds.obs), t))
    return np.clip(out, 0.0, 1.0)


def mean_scores(forecaster, ds: Dataset, n_samples: int = 1000, seed: int = 0, dist=None) -> tuple[float, float]:
    """Mean CRPS (closed form when available) and mean twCRPS12."""
    tw = PRESETS["indicator12"]
    if isinstance(forecaster, Climatology):
        stations = np.asarray(ds.station).astype(str)
        crps = np.empty(len(ds.obs))
        twc = np.empty(len(ds.obs))
        for s in np.unique(stations):
            rows = stations == s
            sample = forecaster.sample_for(s)
            crps[rows] = _crps_ensemble(sample, ds.obs[rows])
            twc[rows] = _crps_ensemble(tw.chain(sample), tw.chain(ds.obs[rows]))
        return float(crps.mean()), float(twc.mean())
    dist = forecaster.predict(ds) if dist is None else dist
    if isinstance(dist, TruncNormal):
        crps = float(np.mean(crps_tn(dist.loc, dist.scale, ds.obs)))
    else:
        crps = mean_sampled_wcrps(dist, ds.obs, WeightFunction(), n=n_samples, seed=[seed, 0]).value
    twc = mean_sampled_wcrps(dist, ds.obs, tw, n=n_samples, seed=[seed, 1]).value
    return float(crps), float(twc)


# --- Brier skill with bootstrap bands


@dataclass
class BootstrapBSS:
    thresholds: np.ndarray
    point: np.ndarray
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_dropped: np.ndarray
    B: int


def _resample_counts(rng, n: int, size: int) -> np.ndarray:
    """How often each record is drawn in ``size`` bootstrap resamples of n records."""
    idx = rng.integers(0, n, size=(size, n))
    idx += np.arange(size)[:, None] * n
    return np.bincount(idx.ravel(), minlength=size * n).reshape(size, n).astype(float)


def bootstrap_bss(model_probs, ref_probs, outcomes, thresholds, B: int = 10000, seed: int = 0,
                  chunk: int = 256) -> BootstrapBSS:
    """Record-level bootstrap of the Brier skill score, pairs resampled jointly.

    Resamples whose reference Brier score is zero are dropped and counted.
    """
    model_probs = np.atleast_2d(np.asarray(model_probs, dtype=float).T).T
    ref_probs = np.atleast_2d(np.asarray(ref_probs, dtype=float).T).T
    outcomes = np.atleast_2d(np.asarray(outcomes, dtype=float).T).T
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    if not (model_probs.shape == ref_probs.shape == outcomes.shape):
        raise ValueError("model, reference and outcome arrays must be aligned")
    if model_probs.shape[1] != thresholds.size:
        raise ValueError("one column per threshold expected")
    if B < 1:
        raise ValueError("B must be at least 1")
    n = model_probs.shape[0]
    bs_m = (model_probs - outcomes) ** 2
    bs_r = (ref_probs - outcomes) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        point = np.where(bs_r.sum(0) > 0, 1.0 - bs_m.sum(0) / bs_r.sum(0), np.nan)
    rng = np.random.default_rng(seed)
    skills = np.empty((B, thresholds.size))
    for start in range(0, B, chunk):
        size = min(chunk, B - start)
        counts = _resample_counts(rng, n, size)
        sm = counts @ bs_m
        sr = counts @ bs_r
        with np.errstate(divide="ignore", invalid="ignore"):
            skills[start:start + size] = np.where(sr > 0, 1.0 - sm / sr, np.nan)
    dropped = np.isnan(skills).sum(axis=0)
    median = np.full(thresholds.size, np.nan)
    lo = median.copy()
    hi = median.copy()
    ok = dropped < B
    if ok.any():
        median[ok] = np.nanmedian(skills[:, ok], axis=0)
        lo[ok] = np.nanpercentile(skills[:, ok], 5, axis=0)
        hi[ok] = np.nanpercentile(skills[:, ok], 95, axis=0)
        # guard against rounding in the percentile interpolation
        lo[ok] = np.minimum(lo[ok], median[ok])
        hi[ok] = np.maximum(hi[ok], median[ok])
    return BootstrapBSS(thresholds, point, median, lo, hi, dropped, B)


# --- reliability


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    mean_prob: float
    obs_freq: float
    count: int
    empty: bool


def reliability_diagram(probs, outcomes, n_bins: int = 10) -> list[ReliabilityBin]:
    probs = np.asarray(probs, dtype=float).ravel()
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    if probs.shape != outcomes.shape:
        raise ValueError("probs and outcomes must be aligned")
    if np.any((probs < 0) | (probs > 1)) or np.any(np.isnan(probs)):
        raise ValueError("probabilities must lie in [0, 1]")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    idx = np.minimum((probs * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    psum = np.bincount(idx, weights=probs, minlength=n_bins)
    osum = np.bincount(idx, weights=outcomes, minlength=n_bins)
    bins = []
    for k in range(n_bins):
        c = int(counts[k])
        bins.append(ReliabilityBin(
            lower=k / n_bins,
            upper=(k + 1) / n_bins,
            mean_prob=psum[k] / c if c else float("nan"),
            obs_freq=osum[k] / c if c else float("nan"),
            count=c,
            empty=c == 0,
        ))
    return bins


# --- full evaluation


@dataclass
class EvalConfig:
    thresholds: np.ndarray = field(default_factory=lambda: DEFAULT_THRESHOLDS.copy())
    bootstrap_B: int = 10000
    seed: int = 0
    n_samples: int = 1000
    reliability_thresholds: tuple = RELIABILITY_THRESHOLDS
    n_bins: int = 10
    min_exceedances: int = MIN_EXCEEDANCES

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)


@dataclass
class VerificationReport:
    thresholds: np.ndarray
    bss_point: np.ndarray
    bss_median: np.ndarray
    bss_lo: np.ndarray
    bss_hi: np.ndarray
    n_dropped: np.ndarray
    exceedances: np.ndarray
    reliability: dict
    crps_mean: float
    twcrps12_mean: float
    n_records: int
    bootstrap_B: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "crps_mean": self.crps_mean,
            "twcrps12_mean": self.twcrps12_mean,
            "bootstrap_B": self.bootstrap_B,
            "seed": self.seed,
            "bss": [
                {"threshold": float(t), "point": _num(p), "median": _num(m), "lo": _num(lo), "hi": _num(hi),
                 "n_dropped": int(d), "exceedances": int(e)}
                for t, p, m, lo, hi, d, e in zip(self.thresholds, self.bss_point, self.bss_median, self.bss_lo,
                                                 self.bss_hi, self.n_dropped, self.exceedances)
            ],
            "reliability": {
                str(t): [{**vars(b), "mean_prob": _num(b.mean_prob), "obs_freq": _num(b.obs_freq)} for b in bins]
                for t, bins in self.reliability.items()
            },
        }

    def write(self, out_dir, svg: bool = False) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "bss_curve.csv", out / "sharpness.csv"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2))
        _write_rows(paths[1], ["threshold", "bss_point", "bss_median", "bss_lo", "bss_hi", "n_dropped", "exceedances"],
                    zip(self.thresholds, self.bss_point, self.bss_median, self.bss_lo, self.bss_hi,
                        self.n_dropped, self.exceedances))
        sharp = []
        for t, bins in self.reliability.items():
            sharp += [(t, b.lower, b.upper, b.count) for b in bins]
            path = out / f"reliability_{_tag(t)}.csv"
            _write_rows(path, ["bin_lower", "bin_upper", "mean_prob", "obs_freq", "count", "empty"],
                        [(b.lower, b.upper, b.mean_prob, b.obs_freq, b.count, int(b.empty)) for b in bins])
            paths.append(path)
        _write_rows(paths[2], ["threshold", "bin_lower", "bin_upper", "count"], sharp)
        if svg:
            path = out / "bss_curve.svg"
            path.write_text(bss_svg(self))
            paths.append(path)
        return paths


def _num(x):
    x = float(x)
    return None if np.isnan(x) else x


def _tag(t) -> str:
    t = float(t)
    return str(int(t)) if t.is_integer() else str(t)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def curve_cutoff(outcomes: np.ndarray, min_exceedances: int = MIN_EXCEEDANCES) -> int:
    """Number of leading thresholds kept: up to the last with enough exceedances."""
    counts = outcomes.sum(axis=0)
    ok = np.nonzero(counts >= min_exceedances)[0]
    return int(ok[-1]) + 1 if ok.size else 0


def evaluate(forecaster, ds: Dataset, reference, config: EvalConfig | None = None) -> VerificationReport:
    """Score a model, bag or climatology on a test set against a reference forecaster."""
    cfg = config or EvalConfig()
    thresholds = cfg.thresholds
    dist = None if isinstance(forecaster, Climatology) else forecaster.predict(ds)
    probs = exceedance_matrix(forecaster, ds, thresholds, dist)
    if reference is forecaster:
        ref_probs = probs
    else:
        ref_probs = exceedance_matrix(reference, ds, thresholds)
    outcomes = ds.obs[:, None] > thresholds[None, :]
    keep = curve_cutoff(outcomes, cfg.min_exceedances)
    boot = bootstrap_bss(probs[:, :keep], ref_probs[:, :keep], outcomes[:, :keep], thresholds[:keep],
                         B=cfg.bootstrap_B, seed=cfg.seed)
    reliability = {}
    for t in cfg.reliability_thresholds:
        col = (ds.obs > t).astype(float)
        if isinstance(forecaster, Climatology):
            p = forecaster.exceed_matrix(ds.station, [t])[:, 0]
        else:
            p = np.clip(1.0 - dist.cdf(np.full(len(ds.obs), float(t))), 0.0, 1.0)
        reliability[float(t)] = reliability_diagram(p, col, cfg.n_bins)
    crps, twc = mean_scores(forecaster, ds, cfg.n_samples, cfg.seed, dist)
    return VerificationReport(
        thresholds=thresholds[:keep],
        bss_point=boot.point,
        bss_median=boot.median,
        bss_lo=boot.lo,
        bss_hi=boot.hi,
        n_dropped=boot.n_dropped,
        exceedances=outcomes[:, :keep].sum(axis=0),
        reliability=reliability,
        crps_mean=crps,
        twcrps12_mean=twc,
        n_records=len(ds.obs),
        bootstrap_B=cfg.bootstrap_B,
        seed=cfg.seed,
    )


def bss_svg(report: VerificationReport, width: int = 480, height: int = 320) -> str:
    """Minimal line plot of the BSS median with its band."""
    t = report.thresholds
    ok = ~np.isnan(report.bss_median)
    if not ok.any():
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    lo = np.nanmin(report.bss_lo[ok])
    hi = max(np.nanmax(report.bss_hi[ok]), 0.0)
    lo = min(lo, 0.0)
    span_y = hi - lo or 1.0
    span_x = (t[ok].max() - t[ok].min()) or 1.0
    pad = 30

    def pt(x, y):
        px = pad + (x - t[ok].min()) / span_x * (width - 2 * pad)
        py = height - pad - (y - lo) / span_y * (height - 2 * pad)
        return f"{px:.1f},{py:.1f}"

    def line(values, style):
        pts = " ".join(pt(x, y) for x, y in zip(t[ok], values[ok]))
        return f'<polyline fill="none" {style} points="{pts}"/>'

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        line(report.bss_lo, 'stroke="#999" stroke-dasharray="4"'),
        line(report.bss_hi, 'stroke="#999" stroke-dasharray="4"'),
        line(report.bss_median, 'stroke="#1f4e9c" stroke-width="2"'),
        f'<line x1="{pad}" x2="{width - pad}" y1="{pt(t[ok].min(), 0.0).split(",")[1]}" '
        f'y2="{pt(t[ok].min(), 0.0).split(",")[1]}" stroke="#000"/>',
        "</svg>",
        "",
    ])

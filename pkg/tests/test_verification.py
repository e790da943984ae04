import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from windpost.data import generate_synthetic, split_folds
from windpost.dists import TruncNormal
from windpost.errors import ConfigurationError
from windpost.param_models import LinearModel
from windpost.scoring import PRESETS, crps_tn
from windpost.verification import (
    DEFAULT_THRESHOLDS,
    Climatology,
    EvalConfig,
    _crps_ensemble,
    bootstrap_bss,
    climatology_prob_exceed,
    curve_cutoff,
    evaluate,
    mean_scores,
    reliability_diagram,
)

# --- climatology


def test_climatology_examples():
    c = Climatology({"A": [10.0, 2.0, 6.0]})
    assert climatology_prob_exceed(c, "A", 5.0) == pytest.approx(2 / 3, abs=1e-15)
    assert climatology_prob_exceed(c, "A", 10.0) == 0.0
    assert climatology_prob_exceed(c, "A", 11.0) == 0.0
    np.testing.assert_array_equal(c.obs["A"], [2.0, 6.0, 10.0])


def test_unknown_station():
    with pytest.raises(LookupError):
        climatology_prob_exceed(Climatology({"A": [1.0]}), "B", 1.0)
    with pytest.raises(ConfigurationError):
        Climatology({"A": []})


@given(st.lists(st.floats(0, 40), min_size=1, max_size=50), st.lists(st.floats(-1, 45), min_size=2, max_size=20))
def test_climatology_exceedance_nonincreasing(obs, thresholds):
    c = Climatology({"S": obs})
    p = c.prob_exceed("S", np.sort(thresholds))
    assert np.all(np.diff(p) <= 0) and np.all((0 <= p) & (p <= 1))


def test_training_exceedance_of_95th_percentile():
    ds = generate_synthetic(40000, "calibrated", seed=8)
    frac = np.mean(ds.obs > 11.88)
    assert frac == pytest.approx(0.05, abs=0.005)


def test_empirical_crps_matches_pairwise_formula():
    rng = np.random.default_rng(1)
    x = np.sort(rng.gamma(2.0, 2.0, 37))
    y = rng.uniform(0, 15, 11)
    direct = np.abs(x[None, :] - y[:, None]).mean(1) - 0.5 * np.abs(x[:, None] - x[None, :]).mean()
    np.testing.assert_allclose(_crps_ensemble(x, y), direct, rtol=1e-12)


# --- bootstrap


def _probs(n=400, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, (n, 3))
    y = rng.uniform(0, 1, (n, 3)) < p
    return p, y


def test_self_reference_is_zero():
    p, y = _probs()
    b = bootstrap_bss(p, p, y, [1, 2, 3], B=500, seed=1)
    np.testing.assert_array_equal(b.median, 0.0)
    np.testing.assert_array_equal(b.lo, b.hi)
    np.testing.assert_array_equal(b.point, 0.0)


def test_single_resample_collapses_band():
    p, y = _probs()
    ref = np.full_like(p, 0.5)
    b = bootstrap_bss(p, ref, y, [1, 2, 3], B=1, seed=3)
    np.testing.assert_array_equal(b.lo, b.median)
    np.testing.assert_array_equal(b.hi, b.median)


def test_perfect_model_scores_one():
    ds = split_folds(generate_synthetic(3000, "calibrated", seed=2))
    clim = Climatology.from_dataset(ds.select_folds("fold1", "fold2", "fold3"))
    test = ds.select_folds("test")
    t = np.array([3.0, 5.0, 8.0])
    outcomes = test.obs[:, None] > t
    b = bootstrap_bss(outcomes.astype(float), clim.exceed_matrix(test.station, t), outcomes, t, B=200)
    np.testing.assert_array_equal(b.median, 1.0)


def test_band_is_ordered_and_contains_point():
    p, y = _probs(seed=4)
    b = bootstrap_bss(p, np.clip(p + 0.2, 0, 1), y, [1, 2, 3], B=2000, seed=0)
    assert np.all(b.lo <= b.median) and np.all(b.median <= b.hi)
    assert np.all((b.lo < b.point) & (b.point < b.hi))


def test_degenerate_reference_resamples_dropped():
    # one positive outcome out of 30: many resamples miss it and the reference Brier score is zero
    y = np.zeros((30, 1), bool)
    y[0] = True
    ref = y.astype(float)
    ref[0] = 0.5
    b = bootstrap_bss(np.full((30, 1), 0.1), ref, y, [1.0], B=1000, seed=0)
    expected = 1000 * (29 / 30) ** 30  # P(record 0 not drawn)
    assert 0 < b.n_dropped[0] and abs(b.n_dropped[0] - expected) < 4 * np.sqrt(expected)
    assert np.isfinite(b.median[0])


def test_bootstrap_is_deterministic_and_validates():
    p, y = _probs()
    a = bootstrap_bss(p, 1 - p, y, [1, 2, 3], B=300, seed=9)
    b = bootstrap_bss(p, 1 - p, y, [1, 2, 3], B=300, seed=9)
    np.testing.assert_array_equal(a.median, b.median)
    with pytest.raises(ValueError):
        bootstrap_bss(p, p[:-1], y, [1, 2, 3])
    with pytest.raises(ValueError):
        bootstrap_bss(p, p, y, [1, 2, 3], B=0)


# --- reliability


def test_reliability_calibrated_within_binomial_ci():
    rng = np.random.default_rng(5)
    p = rng.uniform(0, 1, 200000)
    y = rng.uniform(0, 1, p.size) < p
    bins = reliability_diagram(p, y, 10)
    assert sum(b.count for b in bins) == p.size
    for b in bins:
        lo, hi = binom.interval(0.99, b.count, b.mean_prob)
        assert lo / b.count <= b.obs_freq <= hi / b.count


def test_reliability_all_zero():
    bins = reliability_diagram(np.zeros(50), np.zeros(50), 10)
    populated = [b for b in bins if not b.empty]
    assert len(populated) == 1 and populated[0].obs_freq == 0.0 and populated[0].count == 50
    assert all(np.isnan(b.obs_freq) for b in bins if b.empty)


def test_reliability_perfect_binary():
    y = np.array([0, 1, 1, 0, 1], float)
    bins = [b for b in reliability_diagram(y, y, 10) if not b.empty]
    assert [(b.mean_prob, b.obs_freq) for b in bins] == [(0.0, 0.0), (1.0, 1.0)]


def test_reliability_rejects_bad_probs():
    with pytest.raises(ValueError):
        reliability_diagram([0.2, 1.2], [0, 1])


# --- scores and evaluation


def test_curve_cutoff():
    outcomes = np.zeros((100, 5), bool)
    outcomes[:50, 0] = outcomes[:12, 1] = outcomes[:9, 2] = outcomes[:10, 3] = True
    assert curve_cutoff(outcomes, 10) == 4
    assert curve_cutoff(np.zeros((5, 3), bool), 10) == 0


def test_twcrps12_vanishes_below_threshold():
    class Fixed:
        def predict(self, ds):
            return TruncNormal(np.full(len(ds), 3.0), np.full(len(ds), 1.0))

    ds = generate_synthetic(200, "calibrated", seed=3)
    low = ds.subset(np.flatnonzero(ds.obs < 12))
    crps, tw = mean_scores(Fixed(), low, n_samples=1000, seed=0)
    assert tw <= 1e-6
    assert crps == pytest.approx(np.mean(crps_tn(3.0, 1.0, low.obs)), rel=1e-14)


@pytest.fixture(scope="module")
def fitted(calibrated_small):
    from windpost.optim import TrainConfig, train

    tr = calibrated_small.select_folds("fold1", "fold2", "fold3")
    model = train(LinearModel("tn"), tr, TrainConfig(loss="analytic", max_epochs=80)).model
    return model, Climatology.from_dataset(tr), calibrated_small.select_folds("test")


def test_model_against_itself(fitted):
    model, _, test = fitted
    rep = evaluate(model, test, model, EvalConfig(bootstrap_B=200))
    np.testing.assert_array_equal(rep.bss_median[np.isfinite(rep.bss_median)], 0.0)
    np.testing.assert_array_equal(rep.bss_lo, rep.bss_hi)


def test_climatology_against_itself(fitted):
    _, clim, test = fitted
    rep = evaluate(clim, test, clim, EvalConfig(bootstrap_B=200))
    finite = np.isfinite(rep.bss_median)
    assert finite.sum() >= len(rep.thresholds) - 1
    np.testing.assert_array_equal(rep.bss_median[finite], 0.0)
    # at threshold 0 every observation exceeds and the reference Brier score is zero
    assert not finite[0] and rep.n_dropped[0] == 200


def test_evaluate_report_contents(fitted, tmp_path):
    model, clim, test = fitted
    cfg = EvalConfig(bootstrap_B=300, seed=4)
    rep = evaluate(model, test, clim, cfg)
    assert rep.thresholds[0] == 0.0 and np.all(np.diff(rep.thresholds) == 0.5)
    assert len(rep.thresholds) <= len(DEFAULT_THRESHOLDS)
    assert np.all(rep.exceedances[-1:] >= 10)
    ok = np.isfinite(rep.bss_median)
    assert ok[1:].all()
    assert np.all(rep.bss_lo[ok] <= rep.bss_median[ok]) and np.all(rep.bss_median[ok] <= rep.bss_hi[ok])
    for bins in rep.reliability.values():
        assert sum(b.count for b in bins) == len(test)
    # a trained model beats climatology in the bulk of the distribution
    assert rep.bss_median[rep.thresholds == 5.0][0] > 0
    paths = rep.write(tmp_path, svg=True)
    names = {p.name for p in paths}
    assert {"report.json", "bss_curve.csv", "sharpness.csv", "reliability_5.csv", "reliability_12.csv",
            "bss_curve.svg"} <= names
    with open(tmp_path / "bss_curve.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(rep.thresholds)
    assert json.loads((tmp_path / "report.json").read_text())["bootstrap_B"] == 300
    again = evaluate(model, test, clim, cfg)
    assert json.dumps(again.to_dict()) == json.dumps(rep.to_dict())


def test_registry_mismatch(fitted):
    model, clim, test = fitted
    other = LinearModel("tn", params=model.params, norm_stats=model.norm_stats,
                        registry=("ws10", "mslp", "tke", "hum2m", "t2m"))
    with pytest.raises(ConfigurationError):
        evaluate(other, test, clim, EvalConfig(bootstrap_B=10))


def test_climatology_scores_are_exact(fitted):
    _, clim, test = fitted
    crps, tw = mean_scores(clim, test)
    w = PRESETS["indicator12"]
    ref_c, ref_t = [], []
    for s, y in zip(test.station, test.obs):
        x = clim.sample_for(s)
        ref_c.append(np.abs(x - y).mean() - 0.5 * np.abs(x[:, None] - x[None, :]).mean())
        vx = w.chain(x)
        ref_t.append(np.abs(vx - w.chain(y)).mean() - 0.5 * np.abs(vx[:, None] - vx[None, :]).mean())
    assert crps == pytest.approx(np.mean(ref_c), rel=1e-10)
    assert tw == pytest.approx(np.mean(ref_t), rel=1e-10)

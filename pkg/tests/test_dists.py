import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from windpost.dists import (
    GEV,
    GUMBEL_SWITCH,
    LogNormal,
    Mixture,
    NoiseBlock,
    TruncNormal,
    cdf,
    from_dict,
    mixture,
    pdf,
    quantile,
    sample_reparam,
)
from windpost.errors import DomainError

PROBS = np.linspace(0.01, 0.99, 99)


def random_dist(rng, family):
    loc, scale = rng.uniform(-3, 10), rng.uniform(0.2, 4)
    if family == "tn":
        return TruncNormal(loc, scale)
    if family == "ln":
        return LogNormal(rng.uniform(-1, 2.5), rng.uniform(0.1, 1.2))
    if family == "gev":
        return GEV(loc, scale, rng.uniform(-0.4, 0.4))
    first = TruncNormal(abs(loc) + 1, scale)
    second = LogNormal(rng.uniform(0, 2.5), rng.uniform(0.1, 1.0))
    return mixture(first, second, rng.uniform(0.05, 0.95))


# --- cdf


def test_tn_cdf_at_truncation_point():
    assert cdf(TruncNormal(0, 1), 0.0) == 0.0


def test_degenerate_mixture_equals_first_component():
    tn = TruncNormal(5, 2)
    m = mixture(tn, LogNormal(1, 0.5), 1.0)
    assert cdf(m, 5.0) == pytest.approx(float(tn.cdf(5.0)), abs=1e-15)


def test_gev_cdf_at_location():
    # exp(-(1 + xi*0)^(-1/xi)) = exp(-1); mpmath value
    assert float(cdf(GEV(0, 1, 0.3), 0.0)) == pytest.approx(0.36787944117144232, rel=1e-14)


def test_cdf_rejects_non_finite():
    with pytest.raises(DomainError):
        cdf(TruncNormal(0, 1), np.nan)
    with pytest.raises(DomainError):
        LogNormal(0, 1).cdf(np.inf)


def test_gev_cdf_matches_scipy():
    d = GEV(1.5, 2.0, 0.25)
    x = np.linspace(-5, 30, 50)
    # scipy's genextreme uses c = -xi
    ref = stats.genextreme.cdf(x, -0.25, loc=1.5, scale=2.0)
    np.testing.assert_allclose(d.cdf(x), ref, atol=1e-14)


def test_tn_cdf_matches_scipy():
    d = TruncNormal(2.0, 3.0)
    x = np.linspace(0, 15, 40)
    ref = stats.truncnorm.cdf(x, -2.0 / 3.0, np.inf, loc=2.0, scale=3.0)
    np.testing.assert_allclose(d.cdf(x), ref, atol=1e-14)


@pytest.mark.parametrize("family", ["tn", "ln", "gev", "mix"])
def test_cdf_monotone_and_limits(family, rng):
    for _ in range(20):
        d = random_dist(rng, family)
        x = np.linspace(-50, 400, 2000)
        F = d.cdf(x)
        assert np.all(np.diff(F) >= -1e-15)
        assert float(d.cdf(-1e6)) == pytest.approx(0.0, abs=1e-12)
        assert float(d.cdf(1e9)) == pytest.approx(1.0, abs=1e-9)


# --- quantile


def test_ln_median():
    assert float(quantile(LogNormal(0, 1), 0.5)) == pytest.approx(1.0, rel=1e-15)


def test_tn_median():
    # Phi^-1(0.75) for TN(0, 1) truncated at 0 (mpmath)
    assert float(quantile(TruncNormal(0, 1), 0.5)) == pytest.approx(0.67448975019608174, rel=1e-12)


def test_tn_median_bisection_crosscheck():
    d = TruncNormal(0, 1)
    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if d.cdf(mid) < 0.5 else (lo, mid)
    assert float(d.quantile(0.5)) == pytest.approx(lo, abs=1e-12)


def test_mixture_of_identical_components():
    tn = TruncNormal(5, 2)
    m = mixture(tn, TruncNormal(5, 2), 0.5)
    for q in (0.01, 0.3, 0.5, 0.97):
        assert float(m.quantile(q)) == pytest.approx(float(tn.quantile(q)), abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        quantile(TruncNormal(0, 1), p)


@pytest.mark.parametrize("family,tol", [("tn", 1e-8), ("ln", 1e-8), ("gev", 1e-8), ("mix", 1e-8)])
def test_cdf_quantile_roundtrip_random(family, tol, rng):
    n = 1000 if family != "mix" else 200
    for _ in range(n):
        d = random_dist(rng, family)
        np.testing.assert_allclose(d.cdf(d.quantile(PROBS)), PROBS, atol=tol)


# --- sampling


def test_sample_definitional():
    d = TruncNormal(0, 1)
    out = sample_reparam(d, NoiseBlock(np.array([0.5])))
    assert out[0] == float(d.quantile(0.5))
    np.testing.assert_allclose(sample_reparam(LogNormal(0, 1), NoiseBlock(np.array([0.5, 0.5]))), [1.0, 1.0],
                               rtol=1e-15)


def test_gev_sample_closed_form():
    u = np.array([0.1, 0.5, 0.9])
    out = sample_reparam(GEV(2, 1, 0.3), NoiseBlock(u))
    # 2 + ((-ln u)^(-0.3) - 1) / 0.3, evaluated with mpmath
    np.testing.assert_allclose(out, [1.2621248650908338, 2.3874219487710333, 5.2141647359397563], rtol=1e-13)
    np.testing.assert_allclose(GEV(2, 1, 0.3).cdf(out), u, atol=1e-14)


def test_noise_block_validation():
    with pytest.raises(DomainError):
        NoiseBlock(np.array([0.0, 0.5]))
    with pytest.raises(DomainError):
        NoiseBlock(np.array([0.5, 1.0]))
    nb = NoiseBlock.draw(100, seed=3)
    assert nb.n == 100 and np.all((nb.values > 0) & (nb.values < 1))
    np.testing.assert_array_equal(nb.values, NoiseBlock.draw(100, seed=3).values)


@pytest.mark.parametrize("family", ["tn", "ln", "gev", "mix"])
def test_sampling_ks(family):
    d = {"tn": TruncNormal(2.0, 3.0), "ln": LogNormal(1.0, 0.6), "gev": GEV(3.0, 1.5, 0.2),
         "mix": mixture(TruncNormal(4.0, 2.0), LogNormal(2.2, 0.4), 0.7)}[family]
    n = 10**6 if family != "mix" else 2 * 10**5  # mixture quantiles need bisection
    x = d.sample(NoiseBlock.draw(n, seed=5))
    limit = 0.002 if family != "mix" else 0.0045  # scaled with sqrt(n) for the smaller mixture sample
    assert stats.kstest(x, d.cdf).statistic < limit


def test_sampling_bit_identical():
    d = mixture(TruncNormal(4.0, 2.0), GEV(6.0, 2.0, 0.1), 0.6)
    nb = NoiseBlock.draw(500, seed=9)
    np.testing.assert_array_equal(d.sample(nb), d.sample(nb))


# --- pdf


def test_pdf_examples():
    assert float(pdf(TruncNormal(0, 1), -1.0)) == 0.0
    # 2 * phi(0.5), mpmath value
    assert float(pdf(TruncNormal(0, 1), 0.5)) == pytest.approx(0.70413065352859896, rel=1e-13)
    h = 1e-6
    num = (TruncNormal(0, 1).cdf(0.5 + h) - TruncNormal(0, 1).cdf(0.5 - h)) / (2 * h)
    assert float(num) == pytest.approx(0.70413065352859896, rel=1e-8)


def test_mixture_pdf_linear():
    a, b = TruncNormal(3, 1.5), LogNormal(1.5, 0.5)
    m = mixture(a, b, 0.3)
    x = np.linspace(0.01, 20, 77)
    np.testing.assert_allclose(m.pdf(x), 0.3 * a.pdf(x) + 0.7 * b.pdf(x), rtol=1e-15)
    np.testing.assert_allclose(m.cdf(x), 0.3 * a.cdf(x) + 0.7 * b.cdf(x), rtol=1e-15)


@pytest.mark.parametrize("d", [TruncNormal(1.0, 2.0), TruncNormal(-2.0, 1.0), LogNormal(1.0, 0.5), GEV(2.0, 1.0, 0.3),
                               GEV(2.0, 1.0, -0.3), GEV(0.0, 1.0, 0.0),
                               mixture(TruncNormal(4, 2), LogNormal(2, 0.5), 0.4)])
def test_pdf_integrates_to_one(d):
    lo, hi = float(d.quantile(1e-12)), float(d.quantile(1 - 1e-12))
    total = integrate.quad(lambda x: float(d.pdf(x)), lo, hi, limit=400, points=[0.0] if lo < 0 < hi else None)[0]
    assert total == pytest.approx(1.0, abs=1e-4)


# --- GEV shape switch


def test_gumbel_switch_continuity():
    x = np.linspace(-3, 12, 200)
    gumbel = GEV(1.0, 2.0, 0.0)
    for xi in (GUMBEL_SWITCH * 0.999, GUMBEL_SWITCH * 1.001, -GUMBEL_SWITCH * 1.001):
        np.testing.assert_allclose(GEV(1.0, 2.0, xi).cdf(x), gumbel.cdf(x), atol=1e-6)
    # the two sides of the switch agree closely
    for sign in (1.0, -1.0):
        inside, outside = GEV(1.0, 2.0, sign * GUMBEL_SWITCH * (1 - 1e-9)), GEV(1.0, 2.0, sign * GUMBEL_SWITCH * (1 + 1e-9))
        np.testing.assert_allclose(inside.cdf(x), outside.cdf(x), atol=1e-6)
        np.testing.assert_allclose(inside.quantile(PROBS), outside.quantile(PROBS), atol=1e-6)


# --- mixtures and serialization


def test_mixture_weight_validation():
    with pytest.raises(ValueError):
        mixture(TruncNormal(1, 1), TruncNormal(2, 1), 1.2)
    with pytest.raises(ValueError):
        Mixture((TruncNormal(1, 1), TruncNormal(2, 1)), (0.5, 0.6))


def test_scale_must_be_positive():
    with pytest.raises(DomainError):
        TruncNormal(0.0, 0.0)
    with pytest.raises(DomainError):
        LogNormal(0.0, -1.0)


def test_json_roundtrip():
    d = mixture(TruncNormal(4.0, 2.0), GEV(6.0, 2.0, 0.1), 0.6, adaptive=True)
    back = from_dict(json.loads(json.dumps(d.to_dict())))
    x = np.linspace(0, 20, 31)
    np.testing.assert_array_equal(back.cdf(x), d.cdf(x))
    assert back.family == "AdaptiveMixtureResolved"
    assert set(d.to_dict()) >= {"family", "components"}


@given(st.floats(-5, 15), st.floats(0.05, 5), st.floats(0.001, 0.999))
def test_tn_quantile_inverts_cdf(loc, scale, p):
    d = TruncNormal(loc, scale)
    assert float(d.cdf(d.quantile(p))) == pytest.approx(p, abs=1e-9)


@given(st.floats(0.0, 1.0), st.floats(0.0, 30.0))
def test_mixture_convex_combination(w, x):
    a, b = TruncNormal(5, 2), LogNormal(1.2, 0.7)
    m = mixture(a, b, w)
    assert float(m.cdf(x)) == pytest.approx(w * float(a.cdf(x)) + (1 - w) * float(b.cdf(x)), abs=1e-15)

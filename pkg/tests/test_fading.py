import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from cdfsched.fading import (
    ChannelKind,
    ChannelModel,
    RateFunction,
    cdf_value_stream,
    db_to_linear,
    gamma_p,
    gamma_q,
    linear_to_db,
)


def test_db_round_trip():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert linear_to_db(db_to_linear(7.3)) == pytest.approx(7.3)


@pytest.mark.parametrize("m", [1, 2, 3, 4, 7, 10])
@pytest.mark.parametrize("y", [1e-8, 0.01, 0.5, 1.0, 3.0, 9.9, 10.0, 25.0, 80.0])
def test_regularized_gamma_matches_scipy(m, y):
    assert gamma_p(m, y) == pytest.approx(special.gammainc(m, y), rel=1e-13, abs=1e-300)
    assert gamma_q(m, y) == pytest.approx(special.gammaincc(m, y), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("m,mean", [(1, 1.0), (2, 0.5), (4, 1.0), (4, 10.0), (10, 1.0)])
def test_cdf_matches_gamma_law(m, mean):
    ch = ChannelModel.nakagami(m, mean)
    g = np.linspace(0, 8 * mean, 41)
    ref = stats.gamma(a=m, scale=mean / m).cdf(g)
    np.testing.assert_allclose(ch.cdf(g), ref, rtol=1e-12, atol=1e-15)


def test_cdf_against_integrated_density():
    # independent oracle: adaptive quadrature of the Gamma density
    ch = ChannelModel.nakagami(4, 1.0)
    pdf = lambda g: stats.gamma(a=4, scale=0.25).pdf(g)  # noqa: E731
    ref, _ = integrate.quad(pdf, 0.0, 1.0, epsabs=0, epsrel=1e-13)
    assert abs(ch.cdf(1.0) - ref) < 1e-10


def test_rayleigh_closed_form():
    ch = ChannelModel.rayleigh(2.0)
    assert ch.cdf(1.0) == pytest.approx(1 - math.exp(-0.5), rel=1e-14)


@pytest.mark.parametrize("m,mean,u", [(4, 2.0, 0.9), (1, 1.0, 0.5), (2, 10.0, 1e-6), (10, 1.0, 0.999999)])
def test_inverse_round_trip(m, mean, u):
    ch = ChannelModel.nakagami(m, mean)
    g = ch.inverse_cdf(u)
    assert abs(ch.cdf(g) - u) < 1e-9
    assert g == pytest.approx(stats.gamma(a=m, scale=mean / m).ppf(u), rel=1e-10)


def test_inverse_round_trip_deep_tail_uses_complement():
    ch = ChannelModel.nakagami(4, 1.0)
    for g in np.geomspace(1e-6, 50.0, 60):
        u, q = ch.cdf(g), ch.sf(g)
        back = ch.inverse_cdf(u, q)
        assert back == pytest.approx(g, rel=1e-12)


def test_rayleigh_median():
    assert ChannelModel.rayleigh(1.0).inverse_cdf(0.5) == pytest.approx(math.log(2.0), rel=1e-14)


def test_inverse_edge_cases():
    ch = ChannelModel.nakagami(2, 1.0)
    assert ch.inverse_cdf(0.0) == 0.0
    with pytest.raises(ValueError):
        ch.inverse_cdf(1.0)
    with pytest.raises(ValueError):
        ch.inverse_cdf(1.5)
    with pytest.raises(ValueError):
        ch.cdf(-1.0)


@pytest.mark.parametrize("kwargs", [dict(m=0), dict(m=2.5), dict(m=2, mean_snr=0.0), dict(m=1, mean_snr=-1.0)])
def test_invalid_nakagami(kwargs):
    with pytest.raises(ValueError):
        ChannelModel.nakagami(**kwargs)


def test_samples_follow_cdf(rng):
    ch = ChannelModel.nakagami(4, 1.0)
    x = ch.sample(rng, 200_000)
    assert stats.kstest(x, ch.cdf).pvalue > 0.01
    assert x.mean() == pytest.approx(1.0, rel=0.01)


def test_cdf_values_uniform_for_any_shape(rng):
    _, u1 = cdf_value_stream(ChannelModel.nakagami(1, 1.0), rng, 100_000)
    _, u4 = cdf_value_stream(ChannelModel.nakagami(4, 3.0), rng, 100_000)
    assert stats.kstest(u1, "uniform").pvalue > 0.01
    assert stats.ks_2samp(u1, u4).pvalue > 0.01


def test_constant_channel_randomized_pit(rng):
    ch = ChannelModel.constant(5.0)
    assert ch.kind is ChannelKind.CONSTANT
    snr = ch.sample(rng, 50_000)
    assert np.all(snr == 5.0)
    u = ch.cdf_values(snr, rng)
    assert stats.kstest(u, "uniform").pvalue > 0.01
    assert ch.cdf(4.999) == 0.0 and ch.cdf(5.0) == 1.0
    assert ch.inverse_cdf(0.3) == 5.0


def test_empirical_channel(rng):
    ch = ChannelModel.empirical([(0.0, 0.0), (1.0, 0.5), (3.0, 1.0)])
    assert ch.cdf(0.5) == pytest.approx(0.25)
    assert ch.cdf(2.0) == pytest.approx(0.75)
    assert ch.inverse_cdf(0.75) == pytest.approx(2.0)
    assert ch.bounded_support
    x = ch.sample(rng, 50_000)
    assert stats.kstest(x, ch.cdf).pvalue > 0.01


@pytest.mark.parametrize("table", [[(0.0, 0.0), (1.0, 0.9)], [(1.0, 0.0), (0.5, 1.0)], [(0.0, 0.0), (1.0, 0.6), (2.0, 0.5), (3.0, 1.0)]])
def test_empirical_rejects_bad_tables(table):
    with pytest.raises(ValueError):
        ChannelModel.empirical(table)


def test_config_round_trip():
    ch = ChannelModel.from_config({"type": "nakagami", "m": 4, "mean_snr_db": 10.0})
    assert ch.mean_snr == pytest.approx(10.0)
    assert ChannelModel.from_config(ch.to_config()) == ch
    assert ChannelModel.from_config({"type": "rayleigh", "mean_snr_db": 0}).m == 1
    with pytest.raises(ValueError):
        ChannelModel.from_config({"type": "rician"})


def test_rate_functions():
    sh = RateFunction.shannon()
    assert sh(1.0) == 1.0
    np.testing.assert_allclose(sh(np.array([0.0, 3.0])), [0.0, 2.0])
    cap = RateFunction.capped(2.0)
    assert cap.cap_snr == 3.0
    assert cap(10.0) == 2.0 and cap(1.0) == 1.0
    mcs = RateFunction.mcs([(1.0, 0.5), (3.0, 1.5)])
    np.testing.assert_allclose(mcs(np.array([0.5, 1.0, 2.0, 3.0, 9.0])), [0, 0.5, 0.5, 1.5, 1.5])
    assert mcs.rate(2.0) == 0.5
    assert RateFunction.from_config(None) == sh
    assert RateFunction.from_config(cap.to_config()) == cap
    assert RateFunction.from_config(mcs.to_config()) == mcs


def test_rate_function_validation():
    with pytest.raises(ValueError):
        RateFunction.capped(0.0)
    with pytest.raises(ValueError):
        RateFunction.mcs([(2.0, 1.0), (1.0, 2.0)])

import mpmath
import numpy as np
import pytest
from scipy import special

from cdfsched.special import exp1, exp1_scaled


@pytest.mark.parametrize("z", np.concatenate([np.geomspace(1e-8, 0.99, 25), np.geomspace(1.0, 700.0, 25)]))
def test_exp1_matches_scipy(z):
    assert exp1(float(z)) == pytest.approx(special.exp1(z), rel=2e-14)
    assert exp1_scaled(float(z)) == pytest.approx(special.exp1(z) * np.exp(z), rel=2e-14)


def test_scaled_survives_underflow():
    assert exp1(800.0) == 0.0
    assert exp1_scaled(800.0) == pytest.approx(float(mpmath.e1(800) * mpmath.exp(800)), rel=1e-14)


@pytest.mark.parametrize("z", ["0.01", "0.7", "1.0", "5.5", "40"])
def test_exp1_extended_precision(z):
    with mpmath.workdps(50):
        got = exp1(mpmath.mpf(z))
        ref = mpmath.e1(mpmath.mpf(z))
        assert abs(got - ref) < mpmath.mpf(10) ** -45 * abs(ref)


def test_exp1_domain():
    with pytest.raises(ValueError):
        exp1(0.0)
    with pytest.raises(ValueError):
        exp1_scaled(-1.0)

"""Exponential integral E1 for real positive arguments.

Power series below 1, modified Lentz continued fraction above. Both work
on ``float`` (1e-14 relative target) and on ``mpmath.mpf``, where the
target follows the working precision ``mpmath.mp.dps``.
"""
from __future__ import annotations

import math

import mpmath

EULER_GAMMA = 0.57721566490153286061

_TINY = 1e-300


def _backend(z):
    if isinstance(z, mpmath.mpf):
        return mpmath.log, mpmath.exp, mpmath.euler, mpmath.mpf(10) ** (-mpmath.mp.dps), mpmath.mpf(_TINY)
    return math.log, math.exp, EULER_GAMMA, 1e-16, _TINY


def _e1_series(z):
    # E1(z) = -gamma - ln z - sum_{k>=1} (-z)^k / (k k!)
    log, _exp, euler, eps, _ = _backend(z)
    total = 0 * z
    term = 1 + 0 * z
    k = 1
    while True:
        term *= -z / k
        add = term / k
        total += add
        if abs(add) < eps * abs(total):
            break
        k += 1
    return -euler - log(z) - total


def _e1_scaled_cf(z):
    """e^z E1(z) by the modified Lentz method (z >= 1).

    Continued fraction 1/(z+1- 1/(z+3- 4/(z+5- ...))).
    """
    _log, _exp, _euler, eps, tiny = _backend(z)
    b = z + 1
    c = 1 / tiny
    d = 1 / b
    h = d
    i = 1
    while True:
        a = -(i * i)
        b += 2
        d = 1 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1) < eps:
            break
        i += 1
        if i > 100_000:
            raise ArithmeticError(f"E1 continued fraction failed to converge at z={z}")
    return h


def exp1(z):
    """E1(z) = int_z^inf e^-t / t dt for z > 0."""
    if z <= 0:
        raise ValueError(f"E1 requires a positive argument, got {z}")
    _log, exp, *_ = _backend(z)
    if z < 1:
        return _e1_series(z)
    return exp(-z) * _e1_scaled_cf(z)


def exp1_scaled(z):
    """e^z E1(z); finite for arguments where E1 itself underflows."""
    if z <= 0:
        raise ValueError(f"E1 requires a positive argument, got {z}")
    _log, exp, *_ = _backend(z)
    if z < 1:
        return exp(z) * _e1_series(z)
    return _e1_scaled_cf(z)

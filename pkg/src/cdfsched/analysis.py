"""Throughput and feedback-overhead formulas for CDF-based scheduling.

Everything is built on the universal throughput function

    S(x, a) = int_{F^-1(x)}^inf R(g) d[F(g)]^(1/a)

evaluated over CDF levels v = F(g) on the bounded interval [x, 1]:

    S(x, a) = (1/a) int_x^1 R(F^-1(v)) v^(1/a - 1) dv

so no tail truncation is needed and the weight stays smooth for small a.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy import integrate

from .fading import ChannelKind, ChannelModel, RateFunction, RateKind
from .special import exp1_scaled

LOG2E = 1.0 / math.log(2.0)

#: relative target for u-space quadrature
QUAD_RTOL = 1e-11
#: largest accepted error estimate, relative
QUAD_ACCEPT = 1e-9

_TOP_DECADES = [1.0 - 10.0**-k for k in range(1, 13)]

__all__ = [
    "ThroughputQuery",
    "GainReport",
    "GainScale",
    "CsfrBoundsVerdict",
    "s_universal",
    "s_lower_part",
    "mean_rate",
    "s_cs",
    "s_rrs",
    "s_ub",
    "s_lb",
    "gains",
    "nakagami_coeffs",
    "nakagami_tail_integral",
    "s_nakagami_closed",
    "inv_cdf_asymptotic",
    "gain_scale",
    "s_csfr",
    "csfr_bounds",
    "feedback_overhead",
    "cs_selected_cdf",
    "csfr_selected_cdf",
    "csfr_selected_cdf_nfb",
    "csfr_selected_cdf_fb",
]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha


def _check_unit(name: str, v: float) -> float:
    v = float(v)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return v


def _quad(f, a: float, b: float, points=()) -> float:
    pts = sorted(p for p in points if a < p < b)
    val, err, info, *rest = integrate.quad(
        f, a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=400,
        points=pts or None, full_output=1,
    )
    # roundoff flags near the integrable u -> 1 singularity are benign when
    # the error estimate itself is small
    if rest and rest[0] != 0 and err > QUAD_ACCEPT * max(abs(val), 1e-300):
        raise ArithmeticError(f"quadrature did not converge on [{a}, {b}]: {rest[0]}")
    return val


@lru_cache(maxsize=65536)
def _s_universal(channel: ChannelModel, rate_fn: RateFunction, x: float, alpha: float) -> float:
    if x >= 1.0:
        return 0.0
    if channel.kind is ChannelKind.CONSTANT:
        return rate_fn.rate(channel.constant_snr) * (1.0 - x ** (1.0 / alpha))
    power = 1.0 / alpha - 1.0

    def integrand(v: float) -> float:
        if v <= 0.0:
            return rate_fn.rate(channel.inverse_cdf(0.0)) / alpha if power == 0.0 else 0.0
        # 1 - v is exact for floats in [0.5, 1]; nodes that round onto v = 1
        # get the smallest representable complement instead
        g = channel.inverse_cdf(v, max(1.0 - v, 2.0**-53))
        return rate_fn.rate(g) * math.exp(power * math.log(v)) / alpha

    # above the saturation SNR the rate is flat and the integral is closed form;
    # splitting there also keeps quadrature away from CDF levels that round to 1
    top, flat = 1.0, 0.0
    if math.isfinite(rate_fn.cap_snr):
        c = channel.cdf(rate_fn.cap_snr)
        top = max(x, c)
        if top == c:
            tail = -math.expm1(math.log1p(-channel.sf(rate_fn.cap_snr)) / alpha)
        else:
            tail = -math.expm1(math.log(x) / alpha)
        flat = rate_fn.rate(rate_fn.cap_snr) * tail
        if top >= 1.0 or x >= top:
            return flat
    # kinks of R, and of F^-1 at empirical knots, as CDF levels
    kinks = list(rate_fn.breakpoints())
    if channel.kind is ChannelKind.EMPIRICAL:
        kinks += [s for s, _ in channel.empirical_table]
    points = [channel.cdf(g) for g in kinks if math.isfinite(g)]
    # F^-1 grows like -log(1 - v); decade breakpoints in 1 - v tame the top end
    points += _TOP_DECADES
    return _quad(integrand, x, top, [p for p in points if x < p < top]) + flat


def s_universal(channel: ChannelModel, rate_fn: RateFunction, x: float, alpha: float) -> float:
    """S(x, alpha): rate collected above the x-quantile under the F^(1/alpha) law."""
    return _s_universal(channel, rate_fn, _check_unit("x", x), _check_alpha(alpha))


def s_lower_part(channel: ChannelModel, rate_fn: RateFunction, x: float, alpha: float) -> float:
    """S_L(x, alpha) = S(0, alpha) - S(x, alpha): rate collected below the x-quantile."""
    x = _check_unit("x", x)
    alpha = _check_alpha(alpha)
    if x == 0.0:
        return 0.0
    return _s_universal(channel, rate_fn, 0.0, alpha) - _s_universal(channel, rate_fn, x, alpha)


def mean_rate(channel: ChannelModel, rate_fn: RateFunction) -> float:
    """E[R] = S(0, 1)."""
    return _s_universal(channel, rate_fn, 0.0, 1.0)


def s_cs(channel: ChannelModel, rate_fn: RateFunction, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    return alpha * _s_universal(channel, rate_fn, 0.0, alpha)


def s_rrs(channel: ChannelModel, rate_fn: RateFunction, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    return alpha * mean_rate(channel, rate_fn)


def s_ub(channel: ChannelModel, rate_fn: RateFunction, alpha: float) -> float:
    """Best throughput any policy can reach at access ratio alpha (serve iff F >= 1 - alpha)."""
    alpha = _check_alpha(alpha)
    return _s_universal(channel, rate_fn, 1.0 - alpha, 1.0)


def s_lb(channel: ChannelModel, rate_fn: RateFunction, alpha: float) -> float:
    """Closed lower bound alpha R(F^-1(1 + a ln a)) [1 - (1 + a ln a)^(1/a)] on S_CS."""
    alpha = _check_alpha(alpha)
    a_ln_a = alpha * math.log(alpha)  # in [-1/e, 0]
    level = 1.0 + a_ln_a
    # (1 + a ln a)^(1/a) through log1p; a ln a -> 0- as a -> 1
    bracket = -math.expm1(math.log1p(a_ln_a) / alpha) if a_ln_a > -1.0 else 1.0
    if bracket == 0.0:
        return 0.0
    if level <= 0.0:
        g = channel.inverse_cdf(0.0)
    else:
        g = channel.inverse_cdf(level, -a_ln_a)
    return alpha * rate_fn.rate(g) * bracket


@dataclass(frozen=True)
class ThroughputQuery:
    """Inputs of one analytic throughput evaluation."""

    channel: ChannelModel
    rate_fn: RateFunction
    alpha: float = 1.0
    x: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_unit("x", self.x)
        _check_unit("p", self.p)

    def s(self) -> float:
        return s_universal(self.channel, self.rate_fn, self.x, self.alpha)

    def s_lower(self) -> float:
        return s_lower_part(self.channel, self.rate_fn, self.x, self.alpha)

    def s_csfr(self) -> float:
        return s_csfr(self.channel, self.rate_fn, self.alpha, self.p)


@dataclass(frozen=True)
class GainReport:
    s_cs: float
    s_rrs: float
    s_ub: float
    s_lb: float
    s_csfr: float
    e_r: float

    @property
    def g_cs(self) -> float:
        return self.s_cs / self.s_rrs

    @property
    def g_ub(self) -> float:
        return self.s_ub / self.s_rrs

    @property
    def g_csfr(self) -> float:
        return self.s_csfr / self.s_rrs

    def ordered(self, tol: float = 1e-6) -> bool:
        return (
            self.s_rrs <= self.s_csfr + tol
            and self.s_csfr <= self.s_cs + tol
            and self.s_cs <= self.s_ub + tol
            and self.s_lb <= self.s_cs + tol
        )


def gains(channel: ChannelModel, rate_fn: RateFunction, alpha: float, p: float = 0.0) -> GainReport:
    return GainReport(
        s_cs=s_cs(channel, rate_fn, alpha),
        s_rrs=s_rrs(channel, rate_fn, alpha),
        s_ub=s_ub(channel, rate_fn, alpha),
        s_lb=s_lb(channel, rate_fn, alpha),
        s_csfr=s_csfr(channel, rate_fn, alpha, p),
        e_r=mean_rate(channel, rate_fn),
    )


# -- Nakagami-m closed form ---------------------------------------------------


@lru_cache(maxsize=1024)
def nakagami_coeffs(m: int, k: int) -> tuple[Fraction, ...]:
    """Exact coefficients c(j, k) of (sum_{l<m} y^l / l!)^k, j = 0..k(m-1).

    Uses the power-of-a-series recursion
    c(j, k) = (1/j) sum_{l=1}^{min(j, m-1)} (l(k+1) - j)/l! c(j-l, k).
    """
    top = k * (m - 1)
    c = [Fraction(0)] * (top + 1)
    c[0] = Fraction(1)
    inv_fact = [Fraction(1, math.factorial(l)) for l in range(m)]
    for j in range(1, top + 1):
        acc = Fraction(0)
        for l in range(1, min(j, m - 1) + 1):
            acc += (l * (k + 1) - j) * inv_fact[l] * c[j - l]
        c[j] = acc / j
    return tuple(c)


def nakagami_tail_integral(g_th, j: int, theta):
    """int_{g_th}^inf g^j e^{-g/theta} / (1 + g) dg via E1 and incomplete gammas.

    The common factor e^{1/theta} is folded into e^{-g_th/theta}. The
    binomial expansion cancels heavily, so pass ``mpmath.mpf`` arguments
    under enough working precision; plain floats are only safe for small j.
    """
    exp = mpmath.exp if isinstance(theta, mpmath.mpf) else math.exp
    z = (1 + g_th) / theta
    total = (-1) ** j * exp1_scaled(z)
    partial = 0 * z  # sum_{l<i} z^l / l!
    zl_over_lfact = 1 + 0 * z
    for i in range(1, j + 1):
        partial += zl_over_lfact
        zl_over_lfact *= z / i
        total += math.comb(j, i) * (-1) ** (j - i) * theta**i * math.factorial(i - 1) * partial
    return exp(-g_th / theta) * total


def _closed_form_dps(m: int, K: int, a: float, g_th: float) -> int:
    # digits lost to the alternating sums: terms grow like e^{K a (1 + g_th)}
    # against results of order one, plus binomial and factorial growth
    lost = math.log10(math.e) * K * a * (1.0 + g_th)
    lost += K * math.log10(2.0) + math.lgamma(K * (m - 1) + 1) / math.log(10)
    return 30 + int(lost)


def s_nakagami_closed(channel: ChannelModel, x: float, K: int) -> float:
    """S(x, 1/K) for integer K, integer m and Shannon rate, in closed form.

    Evaluated in extended precision because the inclusion-exclusion sum over
    k and the binomial expansion inside each tail integral cancel heavily.
    """
    if channel.kind is not ChannelKind.NAKAGAMI:
        raise ValueError("closed form needs a Nakagami-m channel")
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    K = int(K)
    x = _check_unit("x", x)
    if x >= 1.0:
        return 0.0
    m = channel.m
    a_f = m / channel.mean_snr
    g_f = channel.inverse_cdf(x) if x > 0 else 0.0
    with mpmath.workdps(_closed_form_dps(m, K, a_f, g_f)):
        a = mpmath.mpf(m) / mpmath.mpf(channel.mean_snr)
        g_th = mpmath.mpf(g_f)
        head = mpmath.log(1 + g_th) / mpmath.log(2) * (1 - mpmath.mpf(x) ** K)
        total = mpmath.mpf(0)
        for k in range(1, K + 1):
            theta = 1 / (k * a)
            sign = 1 if k % 2 == 1 else -1
            binom = math.comb(K, k)
            for j, c in enumerate(nakagami_coeffs(m, k)):
                if c == 0:
                    continue
                coef = mpmath.mpf(c.numerator) / c.denominator
                total += sign * binom * coef * a**j * nakagami_tail_integral(g_th, j, theta)
        return float(head + total / mpmath.log(2))


# -- asymptotics --------------------------------------------------------------


def inv_cdf_asymptotic(m: int, mean_snr: float, alpha: float) -> float:
    """Leading-order upper quantile (mean/m)[ln(1/a) + (m-1) ln ln(1/a)]."""
    alpha = _check_alpha(alpha)
    if alpha >= 1.0 / math.e:
        raise ValueError(f"asymptotic quantile needs alpha < 1/e, got {alpha}")
    l1 = math.log(1.0 / alpha)
    return mean_snr / m * (l1 + (m - 1) * math.log(l1))


@dataclass(frozen=True)
class GainScale:
    g_lb_asym: float
    g_ub_asym: float
    loglog_scale: float


def gain_scale(channel: ChannelModel, rate_fn: RateFunction, alpha: float) -> GainScale:
    """Finite-alpha versions of the gain limits and the ln ln(1/alpha) growth scale.

    These are diagnostics; the limits they approximate hold only as alpha -> 0.
    """
    alpha = _check_alpha(alpha)
    er = mean_rate(channel, rate_fn)
    a_ln_a = alpha * math.log(alpha)
    if alpha < 1.0:
        g_ub = rate_fn.rate(channel.inverse_cdf(1.0 - alpha, alpha)) / er
        g_lb = rate_fn.rate(channel.inverse_cdf(1.0 + a_ln_a, -a_ln_a)) / er
    else:
        g_ub = g_lb = math.inf
    scale = LOG2E * math.log(math.log(1.0 / alpha)) / er if alpha < 1.0 / math.e else math.nan
    return GainScale(g_lb, g_ub, scale)


# -- feedback reduction -------------------------------------------------------


def s_csfr(channel: ChannelModel, rate_fn: RateFunction, alpha: float, p: float) -> float:
    """Per-user throughput with threshold feedback at no-feedback probability p."""
    alpha = _check_alpha(alpha)
    p = _check_unit("p", p)
    if p == 0.0:
        return s_cs(channel, rate_fn, alpha)
    x = p**alpha
    upper = _s_universal(channel, rate_fn, x, alpha)
    lower = s_lower_part(channel, rate_fn, x, 1.0)
    return alpha * upper + alpha * p ** (1.0 - alpha) * lower


@dataclass(frozen=True)
class CsfrBoundsVerdict:
    ratio: float
    floor: float
    lower: float
    ok: bool


def csfr_bounds(alpha: float, p: float, s_cs_value: float, s_csfr_value: float,
                slack: float = 1e-9) -> CsfrBoundsVerdict:
    """Check 1 - p <= 1 - p + a p^(2-a) <= S_CSFR / S_CS <= 1."""
    alpha = _check_alpha(alpha)
    p = _check_unit("p", p)
    ratio = s_csfr_value / s_cs_value
    floor = 1.0 - p
    lower = 1.0 - p + alpha * p ** (2.0 - alpha)
    ok = floor <= lower + slack and lower <= ratio + slack and ratio <= 1.0 + slack
    return CsfrBoundsVerdict(ratio, floor, lower, ok)


def feedback_overhead(weights, p: float) -> tuple[float, float, float]:
    """Mean feedback count per slot and its two upper bounds.

    Returns ``(mu, n(1 - p^(1/n)), -ln p)`` with mu = sum_i (1 - p^alpha_i).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w <= 0):
        raise ValueError("weights must be a nonempty vector of positive numbers")
    alpha = w / w.sum()
    n = w.size
    mu = float(np.sum(-np.expm1(alpha * math.log(p))))
    equal = -n * math.expm1(math.log(p) / n)
    ln_bound = -math.log(p)
    if not (mu <= equal * (1 + 1e-12) and equal <= ln_bound * (1 + 1e-12)):
        raise ArithmeticError(f"feedback bounds violated: {mu} <= {equal} <= {ln_bound}")
    return mu, equal, ln_bound


# -- selected-SNR laws --------------------------------------------------------


def cs_selected_cdf(channel: ChannelModel, alpha: float, snr):
    """CDF of a user's SNR given CS selected it: F^(1/alpha)."""
    alpha = _check_alpha(alpha)
    return np.asarray(channel.cdf(snr)) ** (1.0 / alpha)


def csfr_selected_cdf(channel: ChannelModel, alpha: float, p: float, snr):
    """CDF of the selected SNR under CS-FR.

    p^(1-a) F below F^-1(p^a), F^(1/a) above; reduces to F^(1/a) at p = 0.
    """
    alpha = _check_alpha(alpha)
    p = _check_unit("p", p)
    f = np.asarray(channel.cdf(snr), dtype=float)
    upper = f ** (1.0 / alpha)
    if p == 0.0:
        return upper
    out = np.where(f < p**alpha, p ** (1.0 - alpha) * f, upper)
    return float(out) if out.ndim == 0 else out


def csfr_selected_cdf_nfb(channel: ChannelModel, alpha: float, p: float, snr):
    """Selected-SNR CDF restricted to no-feedback slots: min(p^-a F, 1)."""
    alpha = _check_alpha(alpha)
    p = _check_unit("p", p)
    if p == 0.0:
        raise ValueError("no-feedback slots never occur at p = 0")
    f = np.asarray(channel.cdf(snr), dtype=float)
    out = np.minimum(f / p**alpha, 1.0)
    return float(out) if out.ndim == 0 else out


def csfr_selected_cdf_fb(channel: ChannelModel, alpha: float, p: float, snr):
    """Selected-SNR CDF restricted to feedback slots: (F^(1/a) - p)/(1 - p) above the threshold."""
    alpha = _check_alpha(alpha)
    p = _check_unit("p", p)
    if p >= 1.0:
        raise ValueError("feedback slots never occur at p = 1")
    f = np.asarray(channel.cdf(snr), dtype=float)
    out = np.where(f < p**alpha, 0.0, (f ** (1.0 / alpha) - p) / (1.0 - p))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out

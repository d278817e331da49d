"""Stationary block-fading channel models and rate functions.

Every quantity here is in linear SNR. Configs may give average SNR in dB;
:func:`ChannelModel.from_config` converts on load.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "ChannelKind",
    "ChannelModel",
    "RateKind",
    "RateFunction",
    "db_to_linear",
    "linear_to_db",
    "cdf",
    "inverse_cdf",
    "sample",
    "cdf_value_stream",
]


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


# -- regularized incomplete gamma for integer shape ---------------------------


def _poly_head(m: int, y: float) -> float:
    # sum_{j<m} y^j / j!
    term = 1.0
    total = 1.0
    for j in range(1, m):
        term *= y / j
        total += term
    return total


def _lower_series(m: int, y: float) -> float:
    # e^{-y} y^m/m! * sum_k y^k / ((m+1)...(m+k)); accurate for y < m + 1
    if y == 0.0:
        return 0.0
    log_lead = -y + m * math.log(y) - math.lgamma(m + 1)
    term = 1.0
    total = 1.0
    k = 1
    while True:
        term *= y / (m + k)
        total += term
        if term < 1e-17 * total:
            break
        k += 1
    return math.exp(log_lead) * total


def gamma_p(m: int, y: float) -> float:
    """Regularized lower incomplete gamma P(m, y) for integer m >= 1."""
    if y <= 0.0:
        return 0.0
    if y < m:
        return _lower_series(m, y)
    return 1.0 - math.exp(-y) * _poly_head(m, y)


def gamma_q(m: int, y: float) -> float:
    """Regularized upper incomplete gamma Q(m, y) = 1 - P(m, y)."""
    if y <= 0.0:
        return 1.0
    if y < m:
        return 1.0 - _lower_series(m, y)
    return math.exp(-y) * _poly_head(m, y)


def _log_gamma_pdf(m: int, y: float) -> float:
    return (m - 1) * math.log(y) - y - math.lgamma(m)


def _gamma_inv(m: int, u: float, q: float) -> float:
    """Solve P(m, y) = u (equivalently Q(m, y) = q) for y >= 0.

    ``q`` is the complement 1 - u supplied by the caller so that upper-tail
    probabilities keep full relative precision.
    """
    if u <= 0.0:
        return 0.0
    lower = u <= 0.5
    target = math.log(u) if lower else math.log(q)

    def resid(y: float) -> tuple[float, float]:
        # residual of log P - log u (or log Q - log q) and its derivative
        if lower:
            p = gamma_p(m, y)
            if p <= 0.0:
                return -math.inf, math.inf
            return math.log(p) - target, math.exp(_log_gamma_pdf(m, y)) / p
        qq = gamma_q(m, y)
        if qq <= 0.0:
            return -math.inf, -math.inf
        return math.log(qq) - target, -math.exp(_log_gamma_pdf(m, y)) / qq

    # initial guess
    if lower:
        y = math.exp((math.log(u) + math.lgamma(m + 1)) / m)
        y = min(y, float(m))
    else:
        lq = -math.log(q)
        y = lq + (m - 1) * math.log(max(lq, 1.0))
        y = max(y, 1e-3)

    # bracket [lo, hi] with resid(lo) < 0 < resid(hi) for the lower branch,
    # reversed sign for the upper branch (log Q is decreasing)
    sign = 1.0 if lower else -1.0
    lo, hi = 0.0, None
    r, _ = resid(y)
    if sign * r > 0:
        hi = y
    else:
        lo = y
        step = max(y, 1.0)
        while hi is None:
            cand = lo + step
            rc, _ = resid(cand)
            if sign * rc > 0:
                hi = cand
            else:
                lo = cand
                step *= 2.0

    for _ in range(200):
        r, d = resid(y)
        if r == 0.0:
            return y
        if sign * r > 0:
            hi = y
        else:
            lo = y
        y_new = y - r / d if math.isfinite(d) and d != 0.0 else 0.5 * (lo + hi)
        if not (lo < y_new < hi):
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 4e-16 * max(y_new, 1e-300):
            return y_new
        y = y_new
        if hi - lo <= 4e-16 * hi:
            return y
    return y


# -- channel model ------------------------------------------------------------


class ChannelKind(str, Enum):
    NAKAGAMI = "nakagami"
    CONSTANT = "constant"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class ChannelModel:
    """Stationary per-slot SNR distribution.

    Use the :meth:`nakagami`, :meth:`constant` and :meth:`empirical`
    constructors rather than building the dataclass by hand.
    """

    kind: ChannelKind
    m: int = 1
    mean_snr: float = 1.0
    constant_snr: float = 0.0
    empirical_table: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.kind is ChannelKind.NAKAGAMI:
            if int(self.m) != self.m or self.m <= 0:
                raise ValueError(f"shape parameter m must be a positive integer, got {self.m}")
            if not self.mean_snr > 0:
                raise ValueError(f"mean_snr must be positive, got {self.mean_snr}")
        elif self.kind is ChannelKind.CONSTANT:
            if not self.constant_snr > 0:
                raise ValueError(f"constant_snr must be positive, got {self.constant_snr}")
        elif self.kind is ChannelKind.EMPIRICAL:
            tab = self.empirical_table
            if len(tab) < 2:
                raise ValueError("empirical table needs at least two knots")
            snr = [s for s, _ in tab]
            cdf = [c for _, c in tab]
            if any(s < 0 for s in snr) or any(b <= a for a, b in zip(snr, snr[1:])):
                raise ValueError("empirical snr knots must be nonnegative and strictly increasing")
            if any(b < a for a, b in zip(cdf, cdf[1:])):
                raise ValueError("empirical cdf values must be nondecreasing")
            if cdf[0] != 0.0 or cdf[-1] != 1.0:
                raise ValueError("empirical cdf must start at 0 and end at 1")

    # constructors

    @classmethod
    def nakagami(cls, m: int, mean_snr: float = 1.0) -> "ChannelModel":
        if int(m) != m:
            raise ValueError(f"shape parameter m must be a positive integer, got {m}")
        return cls(ChannelKind.NAKAGAMI, m=int(m), mean_snr=float(mean_snr))

    @classmethod
    def rayleigh(cls, mean_snr: float = 1.0) -> "ChannelModel":
        return cls.nakagami(1, mean_snr)

    @classmethod
    def constant(cls, snr: float) -> "ChannelModel":
        return cls(ChannelKind.CONSTANT, constant_snr=float(snr))

    @classmethod
    def empirical(cls, table) -> "ChannelModel":
        tab = tuple((float(s), float(c)) for s, c in table)
        return cls(ChannelKind.EMPIRICAL, empirical_table=tab)

    @classmethod
    def from_config(cls, cfg: dict) -> "ChannelModel":
        """Build from a config table such as ``{type="nakagami", m=4, mean_snr_db=0}``."""
        kind = cfg.get("type", "nakagami").lower()
        if kind in ("nakagami", "rayleigh"):
            if "mean_snr_db" in cfg:
                mean = db_to_linear(float(cfg["mean_snr_db"]))
            else:
                mean = float(cfg.get("mean_snr", 1.0))
            m = 1 if kind == "rayleigh" else cfg.get("m", 1)
            return cls.nakagami(m, mean)
        if kind == "constant":
            if "snr_db" in cfg:
                return cls.constant(db_to_linear(float(cfg["snr_db"])))
            return cls.constant(float(cfg["snr"]))
        if kind == "empirical":
            return cls.empirical(cfg["table"])
        raise ValueError(f"unknown channel type {kind!r}")

    def to_config(self) -> dict:
        if self.kind is ChannelKind.NAKAGAMI:
            return {"type": "nakagami", "m": self.m, "mean_snr": self.mean_snr}
        if self.kind is ChannelKind.CONSTANT:
            return {"type": "constant", "snr": self.constant_snr}
        return {"type": "empirical", "table": [list(k) for k in self.empirical_table]}

    # properties

    @property
    def is_continuous(self) -> bool:
        return self.kind is not ChannelKind.CONSTANT

    @property
    def bounded_support(self) -> bool:
        return self.kind is not ChannelKind.NAKAGAMI

    @property
    def mean(self) -> float:
        if self.kind is ChannelKind.NAKAGAMI:
            return self.mean_snr
        if self.kind is ChannelKind.CONSTANT:
            return self.constant_snr
        s = np.array([k[0] for k in self.empirical_table])
        c = np.array([k[1] for k in self.empirical_table])
        # piecewise-uniform mass between knots
        return float(np.sum(np.diff(c) * 0.5 * (s[1:] + s[:-1])))

    @property
    def _rate(self) -> float:
        return self.m / self.mean_snr

    def _knots(self) -> tuple[np.ndarray, np.ndarray]:
        tab = np.asarray(self.empirical_table, dtype=float)
        return tab[:, 0], tab[:, 1]

    # distribution functions

    def cdf(self, snr):
        """F(snr). Accepts scalars or arrays; scalars return ``float``."""
        if np.ndim(snr) == 0:
            x = float(snr)
            if x < 0 or math.isnan(x):
                raise ValueError(f"snr must be nonnegative, got {snr}")
            return self._cdf_scalar(x)
        x = np.asarray(snr, dtype=float)
        if np.any(x < 0) or np.any(np.isnan(x)):
            raise ValueError("snr must be nonnegative")
        if self.kind is ChannelKind.NAKAGAMI:
            return _gamma_p_array(self.m, self._rate * x)
        if self.kind is ChannelKind.CONSTANT:
            return (x >= self.constant_snr).astype(float)
        s, c = self._knots()
        return np.interp(x, s, c, left=0.0, right=1.0)

    def _cdf_scalar(self, x: float) -> float:
        if self.kind is ChannelKind.NAKAGAMI:
            return gamma_p(self.m, self._rate * x)
        if self.kind is ChannelKind.CONSTANT:
            return 1.0 if x >= self.constant_snr else 0.0
        s, c = self._knots()
        return float(np.interp(x, s, c, left=0.0, right=1.0))

    def sf(self, snr: float) -> float:
        """Survival function 1 - F(snr) with full upper-tail precision (scalar)."""
        x = float(snr)
        if x < 0:
            raise ValueError(f"snr must be nonnegative, got {snr}")
        if self.kind is ChannelKind.NAKAGAMI:
            return gamma_q(self.m, self._rate * x)
        return 1.0 - self._cdf_scalar(x)

    def cdf_left(self, snr):
        """Left limit F(snr-); differs from :meth:`cdf` only at atoms."""
        if self.kind is ChannelKind.CONSTANT:
            x = np.asarray(snr, dtype=float)
            out = (x > self.constant_snr).astype(float)
            return float(out) if out.ndim == 0 else out
        return self.cdf(snr)

    def pdf(self, snr):
        """Density of a continuous model."""
        if self.kind is ChannelKind.CONSTANT:
            raise ValueError("constant channel has no density")
        x = np.asarray(snr, dtype=float)
        if self.kind is ChannelKind.NAKAGAMI:
            a = self._rate
            with np.errstate(divide="ignore"):
                logf = (
                    self.m * math.log(a)
                    + (self.m - 1) * np.log(x)
                    - a * x
                    - math.lgamma(self.m)
                )
            out = np.exp(logf)
            if self.m == 1:
                out = np.where(x >= 0, a * np.exp(-a * x), 0.0)
        else:
            s, c = self._knots()
            slope = np.diff(c) / np.diff(s)
            idx = np.searchsorted(s, x, side="right") - 1
            inside = (idx >= 0) & (idx < len(slope))
            out = np.where(inside, slope[np.clip(idx, 0, len(slope) - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def inverse_cdf(self, u: float, q: float | None = None) -> float:
        """Smallest snr with F(snr) >= u.

        ``q`` optionally supplies 1 - u computed without cancellation; pass it
        when u is within a few ulps of 1.
        """
        u = float(u)
        if not (0.0 <= u <= 1.0) or math.isnan(u):
            raise ValueError(f"probability must lie in [0, 1], got {u}")
        if q is None:
            q = 1.0 - u
        if self.kind is ChannelKind.CONSTANT:
            return self.constant_snr
        if self.kind is ChannelKind.EMPIRICAL:
            s, c = self._knots()
            if u <= 0.0:
                return float(s[0])
            j = int(np.searchsorted(c, u, side="left"))
            j = min(max(j, 1), len(c) - 1)
            c0, c1 = c[j - 1], c[j]
            return float(s[j - 1] + (u - c0) / (c1 - c0) * (s[j] - s[j - 1]))
        if q <= 0.0:
            raise ValueError("u = 1 has no finite preimage for an unbounded channel")
        return _gamma_inv(self.m, u, q) / self._rate

    # sampling

    def sample(self, rng: np.random.Generator, size=None):
        """I.i.d. per-slot SNR draws.

        Gamma(m) draws are built as a sum of m standard exponentials scaled
        by ``mean_snr / m``.
        """
        shape = () if size is None else size
        n = int(np.prod(shape))
        if self.kind is ChannelKind.CONSTANT:
            out = np.full(n, self.constant_snr)
        elif self.kind is ChannelKind.NAKAGAMI:
            out = rng.standard_exponential((self.m, n)).sum(axis=0) / self._rate
        else:
            s, c = self._knots()
            u = rng.random(n)
            out = _empirical_inverse_array(s, c, u)
        if size is None:
            return float(out[0])
        return out.reshape(shape)

    def cdf_values(self, snr, rng: np.random.Generator | None = None):
        """Probability-integral transform of ``snr``.

        At an atom of F the value is spread uniformly over the jump
        [F(snr-), F(snr)], which is what makes a constant channel produce
        Uniform[0, 1] values.
        """
        if self.is_continuous:
            return self.cdf(snr)
        if rng is None:
            raise ValueError("a random stream is needed to randomize CDF values of a constant channel")
        lo = np.asarray(self.cdf_left(snr), dtype=float)
        hi = np.asarray(self.cdf(snr), dtype=float)
        v = rng.random(lo.shape)
        out = lo + v * (hi - lo)
        return float(out) if out.ndim == 0 else out


def _gamma_p_array(m: int, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if m == 1:
        return -np.expm1(-y)
    out = np.empty_like(y)
    small = y < m
    ys = y[small]
    if ys.size:
        # series branch
        with np.errstate(divide="ignore"):
            log_lead = -ys + m * np.log(ys) - math.lgamma(m + 1)
        term = np.ones_like(ys)
        total = np.ones_like(ys)
        k = 1
        while True:
            term = term * ys / (m + k)
            total += term
            if np.all(term <= 1e-17 * total):
                break
            k += 1
        out[small] = np.where(ys > 0, np.exp(log_lead) * total, 0.0)
    yl = y[~small]
    if yl.size:
        term = np.ones_like(yl)
        head = np.ones_like(yl)
        for j in range(1, m):
            term = term * yl / j
            head += term
        out[~small] = 1.0 - np.exp(-yl) * head
    return out


def _empirical_inverse_array(s: np.ndarray, c: np.ndarray, u: np.ndarray) -> np.ndarray:
    j = np.clip(np.searchsorted(c, u, side="left"), 1, len(c) - 1)
    c0, c1 = c[j - 1], c[j]
    frac = np.where(c1 > c0, (u - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
    return s[j - 1] + frac * (s[j] - s[j - 1])


# -- rate functions -----------------------------------------------------------


class RateKind(str, Enum):
    SHANNON = "shannon"
    CAPPED_SHANNON = "capped_shannon"
    TABLE_MCS = "table_mcs"


@dataclass(frozen=True)
class RateFunction:
    """Nondecreasing map from SNR to bits per slot."""

    kind: RateKind = RateKind.SHANNON
    cap_rate: float = math.inf
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind is RateKind.CAPPED_SHANNON and not (0 < self.cap_rate < math.inf):
            raise ValueError("capped Shannon rate needs a finite positive cap_rate")
        if self.kind is RateKind.TABLE_MCS:
            if not self.table:
                raise ValueError("MCS table is empty")
            th = [t for t, _ in self.table]
            rt = [r for _, r in self.table]
            if any(b <= a for a, b in zip(th, th[1:])) or any(b < a for a, b in zip(rt, rt[1:])):
                raise ValueError("MCS table must have increasing thresholds and nondecreasing rates")
            if th[0] < 0 or rt[0] < 0:
                raise ValueError("MCS thresholds and rates must be nonnegative")

    @classmethod
    def shannon(cls) -> "RateFunction":
        return cls(RateKind.SHANNON)

    @classmethod
    def capped(cls, cap_rate: float) -> "RateFunction":
        return cls(RateKind.CAPPED_SHANNON, cap_rate=float(cap_rate))

    @classmethod
    def mcs(cls, table) -> "RateFunction":
        return cls(RateKind.TABLE_MCS, table=tuple((float(t), float(r)) for t, r in table))

    @classmethod
    def from_config(cls, cfg: dict | None) -> "RateFunction":
        if not cfg:
            return cls.shannon()
        kind = cfg.get("type", "shannon").lower()
        if kind == "shannon":
            return cls.shannon()
        if kind in ("capped", "capped_shannon"):
            return cls.capped(cfg["cap_rate"])
        if kind in ("mcs", "table_mcs"):
            return cls.mcs(cfg["table"])
        raise ValueError(f"unknown rate function {kind!r}")

    def to_config(self) -> dict:
        if self.kind is RateKind.SHANNON:
            return {"type": "shannon"}
        if self.kind is RateKind.CAPPED_SHANNON:
            return {"type": "capped_shannon", "cap_rate": self.cap_rate}
        return {"type": "table_mcs", "table": [list(t) for t in self.table]}

    @property
    def cap_snr(self) -> float:
        """SNR above which the rate saturates (inf when uncapped)."""
        if self.kind is RateKind.CAPPED_SHANNON:
            return 2.0**self.cap_rate - 1.0
        if self.kind is RateKind.TABLE_MCS:
            return self.table[-1][0]
        return math.inf

    def breakpoints(self) -> list[float]:
        """SNR values where the rate is not smooth."""
        if self.kind is RateKind.CAPPED_SHANNON:
            return [self.cap_snr]
        if self.kind is RateKind.TABLE_MCS:
            return [t for t, _ in self.table]
        return []

    def rate(self, snr: float) -> float:
        """Scalar evaluation (fast path for quadrature integrands)."""
        if self.kind is RateKind.SHANNON:
            return math.log2(1.0 + snr)
        if self.kind is RateKind.CAPPED_SHANNON:
            return min(math.log2(1.0 + snr), self.cap_rate)
        r = 0.0
        for t, rt in self.table:
            if snr >= t:
                r = rt
            else:
                break
        return r

    def __call__(self, snr):
        if np.ndim(snr) == 0:
            return self.rate(float(snr))
        x = np.asarray(snr, dtype=float)
        if self.kind is RateKind.SHANNON:
            return np.log2(1.0 + x)
        if self.kind is RateKind.CAPPED_SHANNON:
            return np.minimum(np.log2(1.0 + x), self.cap_rate)
        th = np.array([t for t, _ in self.table])
        rt = np.concatenate([[0.0], [r for _, r in self.table]])
        return rt[np.searchsorted(th, x, side="right")]


# -- functional aliases -------------------------------------------------------


def cdf(model: ChannelModel, snr):
    return model.cdf(snr)


def inverse_cdf(model: ChannelModel, u: float) -> float:
    return model.inverse_cdf(u)


def sample(model: ChannelModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


def cdf_value_stream(model: ChannelModel, rng: np.random.Generator, size: int):
    """Draw ``size`` slots and return ``(snr, cdf_value)`` arrays.

    For a continuous model the CDF values are Uniform[0, 1]. A constant
    channel has a degenerate CDF; its values are randomized over the jump.
    """
    snr = model.sample(rng, size)
    return snr, model.cdf_values(snr, rng)

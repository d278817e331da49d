"""Per-slot user selection policies.

Every policy has a scalar form (one slot, used in examples and traces) and a
batch form over an array of slots (used by the simulator). Batch inputs are
``(slots, users)`` arrays of SNRs and CDF values.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .fading import ChannelModel, RateFunction

log = logging.getLogger(__name__)

__all__ = [
    "UserSpec",
    "SlotKind",
    "SlotTrace",
    "OffsetVector",
    "CalibrationSchedule",
    "CalibrationError",
    "WeightedRoundRobin",
    "Decision",
    "CSPolicy",
    "CSFRPolicy",
    "RRSPolicy",
    "LiuPolicy",
    "DFPolicy",
    "access_ratios",
    "cs_select",
    "csfr_threshold",
    "csfr_step",
    "rrs_select",
    "liu_select",
    "df_select",
    "calibrate_offsets",
    "optimal_threshold_select",
]


@dataclass(frozen=True)
class UserSpec:
    user_id: int
    weight: float
    channel: ChannelModel
    rate_fn: RateFunction = field(default_factory=RateFunction.shannon)

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"user {self.user_id}: weight must be positive, got {self.weight}")


def access_ratios(users: Sequence[UserSpec]) -> np.ndarray:
    """Target channel access ratios w_i / sum_j w_j."""
    if not users:
        raise ValueError("need at least one user")
    w = np.array([u.weight for u in users], dtype=float)
    return w / w.sum()


class SlotKind(str, Enum):
    FB = "FB"
    NFB = "NFB"


@dataclass(frozen=True)
class SlotTrace:
    slot_index: int
    snr: tuple[float, ...]
    cdf_value: tuple[float, ...]
    fed_back: tuple[bool, ...]
    selected_user: int
    slot_kind: SlotKind
    achieved_rate: float

    def to_dict(self) -> dict:
        return {
            "slot": self.slot_index,
            "snr": list(self.snr),
            "cdf_value": list(self.cdf_value),
            "fed_back": list(self.fed_back),
            "selected": self.selected_user,
            "kind": self.slot_kind.value,
            "rate": self.achieved_rate,
        }


# -- tie handling -------------------------------------------------------------


def _argmax_random_ties(scores: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    """Row-wise argmax of a (slots, users) array, ties broken uniformly.

    The generator is only consumed for rows that actually tie.
    """
    best = scores.max(axis=1, keepdims=True)
    ties = scores == best
    nties = ties.sum(axis=1)
    out = np.argmax(ties, axis=1)
    multi = np.flatnonzero(nties > 1)
    if multi.size:
        if rng is None:
            rng = np.random.default_rng()
        key = rng.random((multi.size, scores.shape[1]))
        key = np.where(ties[multi], key, -1.0)
        out[multi] = np.argmax(key, axis=1)
    return out


def _select_one(scores, rng) -> int:
    return int(_argmax_random_ties(np.asarray(scores, dtype=float)[None, :], rng)[0])


# -- round robin --------------------------------------------------------------


class WeightedRoundRobin:
    """Deterministic credit scheduler (smooth weighted round robin).

    Each step every user earns its weight in credit, the richest user is
    served and pays the total weight. With integer weights the sequence is
    periodic with period sum(w), so every window of sum(w) consecutive slots
    serves user i exactly w_i times.
    """

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.size == 0 or np.any(self.weights <= 0):
            raise ValueError("weights must be a nonempty vector of positive numbers")
        self.total = float(self.weights.sum())
        self.credit = np.zeros_like(self.weights)
        self.position = 0
        self._period = None
        if np.all(self.weights == np.round(self.weights)) and self.total <= 1_000_000:
            self._period = self._build_period(int(self.total))

    def _build_period(self, length: int) -> np.ndarray:
        credit = np.zeros_like(self.weights)
        seq = np.empty(length, dtype=np.int64)
        for t in range(length):
            credit += self.weights
            i = int(np.argmax(credit))
            credit[i] -= self.total
            seq[t] = i
        return seq

    def next(self) -> int:
        return int(self.take(1)[0])

    def take(self, k: int) -> np.ndarray:
        """Next ``k`` selections."""
        if self._period is not None:
            idx = (self.position + np.arange(k)) % self._period.size
            self.position += k
            return self._period[idx]
        out = np.empty(k, dtype=np.int64)
        for t in range(k):
            self.credit += self.weights
            i = int(np.argmax(self.credit))
            self.credit[i] -= self.total
            out[t] = i
        self.position += k
        return out


# -- scalar operations --------------------------------------------------------


def cs_select(users: Sequence[UserSpec], cdf_values, rng: np.random.Generator | None = None) -> int:
    """argmax_i F_i(g_i)^(1/w_i)."""
    if not users:
        raise ValueError("need at least one user")
    u = np.asarray(cdf_values, dtype=float)
    if u.shape != (len(users),):
        raise ValueError("one CDF value per user is required")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("CDF values must lie in [0, 1]")
    w = np.array([usr.weight for usr in users])
    with np.errstate(divide="ignore"):
        return _select_one(np.log(u) / w, rng)


def csfr_threshold(users_or_weights, p: float) -> float:
    """Common feedback threshold p^(1/sum w) that keeps every CAR intact."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"no-feedback probability must lie in (0, 1), got {p}")
    w = _weights(users_or_weights)
    return p ** (1.0 / w.sum())


def csfr_step(users: Sequence[UserSpec], cdf_values, eta_th: float, rr_state=None,
              rng: np.random.Generator | None = None) -> tuple[tuple[bool, ...], SlotKind, int]:
    """One CS-FR slot: returns (fed_back, slot kind, selected user).

    Users whose score F^(1/w) exceeds ``eta_th`` report. With no reports the
    slot is a no-feedback slot served by ``rr_state`` (a
    :class:`WeightedRoundRobin`) or, when it is ``None``, by a random draw
    with probabilities equal to the target CARs.
    """
    if not 0.0 < eta_th < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {eta_th}")
    u = np.asarray(cdf_values, dtype=float)
    w = np.array([usr.weight for usr in users])
    with np.errstate(divide="ignore"):
        score = np.log(u) / w
    fed = score > math.log(eta_th)
    if fed.any():
        sel = _select_one(np.where(fed, score, -np.inf), rng)
        return tuple(bool(f) for f in fed), SlotKind.FB, sel
    if rr_state is not None:
        sel = rr_state.next()
    else:
        if rng is None:
            rng = np.random.default_rng()
        sel = int(rng.choice(len(users), p=w / w.sum()))
    return tuple(bool(f) for f in fed), SlotKind.NFB, sel


def rrs_select(users: Sequence[UserSpec], rr_state: WeightedRoundRobin) -> int:
    return rr_state.next()


def liu_select(users: Sequence[UserSpec], snrs, offsets: "OffsetVector | Sequence[float]",
               rng: np.random.Generator | None = None) -> int:
    """argmax_i R_i(g_i) + c_i."""
    c = _offset_array(offsets, len(users))
    rates = np.array([usr.rate_fn(float(g)) for usr, g in zip(users, snrs)])
    return _select_one(rates + c, rng)


def df_select(users: Sequence[UserSpec], cdf_values, offsets: "OffsetVector | Sequence[float]",
              rng: np.random.Generator | None = None) -> int:
    """argmax_i F_i(g_i) + d_i."""
    c = _offset_array(offsets, len(users))
    return _select_one(np.asarray(cdf_values, dtype=float) + c, rng)


def optimal_threshold_select(user: UserSpec, alpha: float, snr):
    """Throughput-optimal single-user rule at access ratio alpha: serve iff F(snr) >= 1 - alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    f = user.channel.cdf(snr)
    out = np.asarray(f) >= 1.0 - alpha
    return bool(out) if out.ndim == 0 else out


def _weights(users_or_weights) -> np.ndarray:
    seq = list(users_or_weights)
    if seq and isinstance(seq[0], UserSpec):
        w = np.array([u.weight for u in seq], dtype=float)
    else:
        w = np.asarray(seq, dtype=float)
    if w.size == 0 or np.any(w <= 0):
        raise ValueError("weights must be a nonempty vector of positive numbers")
    return w


def _offset_array(offsets, n: int) -> np.ndarray:
    c = np.asarray(offsets.offsets if isinstance(offsets, OffsetVector) else offsets, dtype=float)
    if c.shape != (n,):
        raise ValueError(f"expected {n} offsets, got shape {c.shape}")
    return c


# -- batch policies -----------------------------------------------------------


@dataclass
class Decision:
    """Outcome of a batch of slots.

    ``fed_back`` is ``None`` for full-feedback policies (everyone reports).
    ``nfb`` marks no-feedback slots; ``None`` when the policy has none.
    """

    selected: np.ndarray
    fed_back: np.ndarray | None = None
    nfb: np.ndarray | None = None


class CSPolicy:
    name = "cs"

    def __init__(self, weights):
        self.weights = _weights(weights)

    def new_state(self):
        return None

    def decide(self, snr, u, rng, state) -> Decision:
        with np.errstate(divide="ignore"):
            score = np.log(u) / self.weights
        return Decision(_argmax_random_ties(score, rng))


class CSFRPolicy:
    name = "csfr"

    def __init__(self, weights, p: float, nfb_mode: str = "random"):
        self.weights = _weights(weights)
        self.p = float(p)
        self.eta_th = csfr_threshold(self.weights, self.p)
        if nfb_mode not in ("random", "rr"):
            raise ValueError(f"nfb_mode must be 'random' or 'rr', got {nfb_mode!r}")
        self.nfb_mode = nfb_mode
        self.alpha = self.weights / self.weights.sum()

    def new_state(self):
        return WeightedRoundRobin(self.weights) if self.nfb_mode == "rr" else None

    def decide(self, snr, u, rng, state) -> Decision:
        with np.errstate(divide="ignore"):
            score = np.log(u) / self.weights
        fed = score > math.log(self.eta_th)
        nfb = ~fed.any(axis=1)
        sel = _argmax_random_ties(np.where(fed, score, -np.inf), rng)
        k = int(nfb.sum())
        if k:
            if state is not None:
                sel[nfb] = state.take(k)
            else:
                sel[nfb] = rng.choice(self.weights.size, size=k, p=self.alpha)
        return Decision(sel, fed, nfb)


class RRSPolicy:
    name = "rrs"

    def __init__(self, weights):
        self.weights = _weights(weights)

    def new_state(self):
        return WeightedRoundRobin(self.weights)

    def decide(self, snr, u, rng, state) -> Decision:
        return Decision(state.take(snr.shape[0]), np.zeros(snr.shape, dtype=bool))


class LiuPolicy:
    name = "liu"

    def __init__(self, rate_fns: Sequence[RateFunction], offsets):
        self.rate_fns = list(rate_fns)
        self.offsets = _offset_array(offsets, len(self.rate_fns))

    def new_state(self):
        return None

    def base_scores(self, snr, u) -> np.ndarray:
        return np.column_stack([r(snr[:, i]) for i, r in enumerate(self.rate_fns)])

    def decide(self, snr, u, rng, state) -> Decision:
        return Decision(_argmax_random_ties(self.base_scores(snr, u) + self.offsets, rng))


class DFPolicy:
    name = "df"

    def __init__(self, offsets, n: int | None = None):
        off = offsets.offsets if isinstance(offsets, OffsetVector) else offsets
        self.offsets = np.asarray(off, dtype=float)
        if n is not None and self.offsets.shape != (n,):
            raise ValueError(f"expected {n} offsets")

    def new_state(self):
        return None

    def base_scores(self, snr, u) -> np.ndarray:
        return np.asarray(u, dtype=float)

    def decide(self, snr, u, rng, state) -> Decision:
        return Decision(_argmax_random_ties(u + self.offsets, rng))


# -- offset calibration -------------------------------------------------------


class CalibrationError(RuntimeError):
    """Offsets did not reach the CAR tolerance within the slot budget."""

    def __init__(self, message: str, offsets: "OffsetVector"):
        super().__init__(message)
        self.offsets = offsets


@dataclass(frozen=True)
class OffsetVector:
    offsets: tuple[float, ...]
    policy: str
    iterations: int = 0
    slots_used: int = 0
    residual: float = math.nan
    converged: bool = False

    def __array__(self, dtype=None):
        return np.asarray(self.offsets, dtype=dtype)

    @classmethod
    def zeros(cls, n: int, policy: str) -> "OffsetVector":
        return cls(tuple([0.0] * n), policy, residual=math.nan, converged=False)

    def to_dict(self) -> dict:
        return {
            "offsets": list(self.offsets),
            "policy": self.policy,
            "iterations": self.iterations,
            "slots_used": self.slots_used,
            "residual": self.residual,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class CalibrationSchedule:
    """Step-size plan step_t = a / (1 + t/b) and stopping rule."""

    a: float = 1.0
    b: float = 20.0
    batch_slots: int = 20_000
    check_every: int = 50
    check_slots: int = 500_000
    tol: float = 0.005
    check_tol: float | None = None  # defaults to tol / 2
    max_slots: int = 20_000_000


def _draw_slots(users: Sequence[UserSpec], rng: np.random.Generator, k: int):
    snr = np.column_stack([usr.channel.sample(rng, k) for usr in users])
    u = np.column_stack([usr.channel.cdf_values(snr[:, i], rng) for i, usr in enumerate(users)])
    return snr, u


def calibrate_offsets(users: Sequence[UserSpec], targets, policy: str,
                      schedule: CalibrationSchedule | None = None,
                      seed: int = 0, raise_on_failure: bool = True) -> OffsetVector:
    """Tune Liu (rate) or DF (CDF) offsets until empirical CARs hit ``targets``.

    Stochastic approximation c_i <- c_i + step_t (target_i - CAR_i) on
    batches of fresh slots, with user 0 pinned to zero. The running
    (Polyak) average of the iterates is checked on a long independent
    batch every ``check_every`` updates; the run stops once the checked
    CAR error is below ``check_tol``.
    """
    schedule = schedule or CalibrationSchedule()
    n = len(users)
    t_arr = np.asarray(targets, dtype=float)
    if t_arr.shape != (n,):
        raise ValueError("one target per user is required")
    if np.any((t_arr <= 0) | (t_arr >= 1)) and n > 1:
        raise ValueError("each target must lie in (0, 1)")
    if abs(t_arr.sum() - 1.0) > 1e-9:
        raise ValueError(f"targets must sum to 1, got {t_arr.sum()}")
    policy = policy.lower()
    if policy == "liu":
        scorer = LiuPolicy([usr.rate_fn for usr in users], np.zeros(n))
    elif policy == "df":
        scorer = DFPolicy(np.zeros(n))
    else:
        raise ValueError(f"calibration is defined for 'liu' and 'df', got {policy!r}")
    if n == 1:
        return OffsetVector((0.0,), policy, 0, 0, 0.0, True)

    check_tol = schedule.check_tol if schedule.check_tol is not None else schedule.tol / 2
    ss = np.random.SeedSequence(seed)
    train_rng, check_rng = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))

    def empirical_car(c, rng, k):
        counts = np.zeros(n)
        done = 0
        while done < k:
            b = min(k - done, 100_000)
            snr, u = _draw_slots(users, rng, b)
            sel = _argmax_random_ties(scorer.base_scores(snr, u) + c, rng)
            counts += np.bincount(sel, minlength=n)
            done += b
        return counts / k

    c = np.zeros(n)
    avg = np.zeros(n)
    n_avg = 0
    used = 0
    t = 0
    residual = math.inf
    while used < schedule.max_slots:
        car = empirical_car(c, train_rng, schedule.batch_slots)
        used += schedule.batch_slots
        step = schedule.a / (1.0 + t / schedule.b)
        c = c + step * (t_arr - car)
        c -= c[0]
        t += 1
        # running average of the iterates since the last check
        n_avg += 1
        avg += (c - avg) / n_avg
        if t % schedule.check_every == 0:
            probe = avg if n_avg > 1 else c
            car_chk = empirical_car(probe, check_rng, schedule.check_slots)
            used += schedule.check_slots
            residual = float(np.max(np.abs(car_chk - t_arr)))
            log.debug("calibration %s t=%d residual=%.4g offsets=%s", policy, t, residual, probe)
            if residual < check_tol:
                return OffsetVector(tuple(float(v) for v in probe), policy, t, used, residual, True)
            # restart the average from the current iterate
            avg = c.copy()
            n_avg = 1
    out = OffsetVector(tuple(float(v) for v in avg), policy, t, used, residual, False)
    if raise_on_failure:
        raise CalibrationError(
            f"{policy} calibration stopped after {used} slots with CAR residual {residual:.4g}", out
        )
    return out

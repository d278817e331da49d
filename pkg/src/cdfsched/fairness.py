"""Qualitative fairness: how much multi-user diversity each user gets.

D is the mean CDF value of a user's SNR in the slots where it is served,
D_UB the best achievable value at the same access ratio, I_D = D / D_UB,
and the scheduler-level index (QFI) is the smallest I_D over users.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .sched import SlotTrace

MIN_SELECTIONS = 1_000

__all__ = [
    "InsufficientSelections",
    "SelectionStats",
    "FairnessReport",
    "d_ub",
    "d_cs",
    "i_d_cs",
    "empirical_d",
    "qfi",
    "fairness_from_metrics",
    "fairness_cs",
    "bands_separated",
]


class InsufficientSelections(ValueError):
    pass


def d_ub(alpha):
    """(2 - alpha) / 2."""
    a = np.asarray(alpha, dtype=float)
    if np.any((a <= 0) | (a > 1)):
        raise ValueError("alpha must lie in (0, 1]")
    out = (2.0 - a) / 2.0
    return float(out) if out.ndim == 0 else out


def d_cs(alpha):
    """Mean selected CDF value under CS: 1 / (1 + alpha)."""
    a = np.asarray(alpha, dtype=float)
    out = 1.0 / (1.0 + a)
    return float(out) if out.ndim == 0 else out


def i_d_cs(alpha):
    """2 / ((1 + alpha)(2 - alpha)); never below 8/9."""
    a = np.asarray(alpha, dtype=float)
    if np.any((a <= 0) | (a > 1)):
        raise ValueError("alpha must lie in (0, 1]")
    out = 2.0 / ((1.0 + a) * (2.0 - a))
    return float(out) if out.ndim == 0 else out


@dataclass
class SelectionStats:
    """Mergeable running sums of the CDF value at selection for one user."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, value: float):
        self.count += 1
        self.total += value
        self.total_sq += value * value

    def merge(self, other: "SelectionStats") -> "SelectionStats":
        return SelectionStats(self.count + other.count, self.total + other.total,
                              self.total_sq + other.total_sq)

    def mean_se(self, min_selections: int = MIN_SELECTIONS) -> tuple[float, float]:
        if self.count < min_selections:
            raise InsufficientSelections(
                f"user selected {self.count} times; at least {min_selections} are needed"
            )
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        return mean, math.sqrt(var / self.count)


def empirical_d(traces: Iterable[SlotTrace], user: int,
                min_selections: int = MIN_SELECTIONS) -> tuple[float, float]:
    """Mean recorded CDF value of ``user`` over the slots that selected it, with its s.e."""
    stats = SelectionStats()
    for tr in traces:
        if tr.selected_user == user:
            stats.add(tr.cdf_value[user])
    return stats.mean_se(min_selections)


def qfi(i_d_values) -> float:
    """Scheduler-level index: the smallest per-user I_D."""
    v = np.asarray(list(i_d_values), dtype=float)
    if v.size == 0:
        raise ValueError("need at least one user")
    return float(v.min())


@dataclass
class FairnessReport:
    alpha: np.ndarray
    d_value: np.ndarray
    d_ub: np.ndarray
    i_d: np.ndarray
    estimator_stderr: np.ndarray

    @property
    def qfi(self) -> float:
        return qfi(self.i_d)

    @property
    def qfi_se(self) -> float:
        return float(self.estimator_stderr[int(np.argmin(self.i_d))])

    def band(self, k: float = 3.0) -> tuple[float, float]:
        return self.qfi - k * self.qfi_se, self.qfi + k * self.qfi_se


def fairness_from_metrics(metrics, alpha=None) -> FairnessReport:
    """Per-user D, D_UB and I_D from a simulator report (targets default to its CARs)."""
    a = np.asarray(metrics.target_car if alpha is None else alpha, dtype=float)
    if np.any(metrics.selections < MIN_SELECTIONS):
        raise InsufficientSelections("every user needs at least 1000 selections")
    ub = d_ub(a)
    ub = np.atleast_1d(ub)
    return FairnessReport(a, metrics.d_mean.copy(), ub, metrics.d_mean / ub, metrics.d_se / ub)


def fairness_cs(alpha) -> FairnessReport:
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    return FairnessReport(a, np.atleast_1d(d_cs(a)), np.atleast_1d(d_ub(a)),
                          np.atleast_1d(i_d_cs(a)), np.zeros_like(a))


def bands_separated(better: FairnessReport, worse: FairnessReport, k: float = 3.0) -> bool:
    """True when better.qfi - k se lies above worse.qfi + k se."""
    return better.band(k)[0] > worse.band(k)[1]

"""Slot-driven simulator producing metrics for any policy and user set.

Each replica owns an independent random stream spawned from the master
seed, runs its slots sequentially in fixed-size batches and returns plain
partial sums. Replicas are merged in index order, so the report does not
depend on how many worker threads ran them.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .sched import (
    CSFRPolicy,
    CSPolicy,
    DFPolicy,
    LiuPolicy,
    OffsetVector,
    RRSPolicy,
    SlotKind,
    SlotTrace,
    UserSpec,
    access_ratios,
)

log = logging.getLogger(__name__)

BATCH_SLOTS = 65_536
DEFAULT_RESERVOIR = 10_000

POLICIES = ("cs", "csfr", "rrs", "liu", "df")

__all__ = [
    "CalibrationMissing",
    "SimConfig",
    "MetricsReport",
    "GenieReport",
    "build_policy",
    "replica_seeds",
    "run",
    "simulate_genie",
    "ks_distance",
    "ks_critical",
]


class CalibrationMissing(ValueError):
    """An offset policy was run without calibrated offsets."""


@dataclass
class SimConfig:
    users: list[UserSpec]
    policy: str = "cs"
    params: dict = field(default_factory=dict)
    num_slots: int = 1_000_000
    num_replicas: int = 1
    master_seed: int = 0
    warmup_slots: int = 0
    reservoir_size: int = DEFAULT_RESERVOIR
    workers: int = 1

    def __post_init__(self):
        if not self.users:
            raise ValueError("need at least one user")
        if self.num_slots < 1 or self.num_replicas < 1:
            raise ValueError("num_slots and num_replicas must be positive")
        if self.warmup_slots < 0:
            raise ValueError("warmup_slots must be nonnegative")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


def build_policy(config: SimConfig):
    users = config.users
    w = [u.weight for u in users]
    prm = config.params
    if config.policy == "cs":
        return CSPolicy(w)
    if config.policy == "csfr":
        return CSFRPolicy(w, prm["p"], prm.get("nfb_mode", "random"))
    if config.policy == "rrs":
        return RRSPolicy(w)
    offsets = prm.get("offsets")
    if offsets is None:
        raise CalibrationMissing(f"policy {config.policy!r} needs calibrated offsets (run calibrate_offsets first)")
    if isinstance(offsets, OffsetVector) and offsets.policy != config.policy:
        raise CalibrationMissing(f"offsets were calibrated for {offsets.policy!r}, not {config.policy!r}")
    if config.policy == "liu":
        return LiuPolicy([u.rate_fn for u in users], offsets)
    return DFPolicy(offsets, len(users))


def replica_seeds(master_seed: int, num_replicas: int) -> list[np.random.SeedSequence]:
    """Distinct, reproducible per-replica seed sequences."""
    return np.random.SeedSequence(int(master_seed)).spawn(num_replicas)


# -- per-replica accumulation -------------------------------------------------


class _Reservoir:
    """Uniform fixed-size sample of a stream (algorithm R, batched)."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.buf = np.empty(size)
        self.seen = 0
        self.rng = rng

    def extend(self, values: np.ndarray):
        if self.size == 0 or values.size == 0:
            self.seen += values.size
            return
        free = max(self.size - self.seen, 0)
        head = values[:free]
        self.buf[self.seen:self.seen + head.size] = head
        self.seen += head.size
        rest = values[free:]
        if rest.size:
            t = self.seen + 1 + np.arange(rest.size)
            j = np.floor(self.rng.random(rest.size) * t).astype(np.int64)
            keep = np.flatnonzero(j < self.size)
            for k in keep:  # sequential: later items may overwrite earlier ones
                self.buf[j[k]] = rest[k]
            self.seen += rest.size

    def sample(self) -> np.ndarray:
        return self.buf[: min(self.seen, self.size)].copy()


@dataclass
class _Partial:
    n_users: int
    slots: int = 0
    counts: np.ndarray = None
    rate_sum: np.ndarray = None
    rate_sq: np.ndarray = None
    cdf_sum: np.ndarray = None
    cdf_sq: np.ndarray = None
    fed_counts: np.ndarray = None
    nfb_counts: np.ndarray = None
    fb_total: float = 0.0
    fb_sq: float = 0.0
    nfb_slots: int = 0
    samples: list = None
    samples_nfb: list = None

    def __post_init__(self):
        n = self.n_users
        for name in ("counts", "nfb_counts", "fed_counts"):
            setattr(self, name, np.zeros(n, dtype=np.int64))
        for name in ("rate_sum", "rate_sq", "cdf_sum", "cdf_sq"):
            setattr(self, name, np.zeros(n))


def _run_replica(config: SimConfig, policy, seed: np.random.SeedSequence,
                 trace_sink: Callable[[SlotTrace], None] | None, replica: int) -> _Partial:
    sim_ss, aux_ss = seed.spawn(2)
    rng = np.random.Generator(np.random.PCG64(sim_ss))
    aux = np.random.Generator(np.random.PCG64(aux_ss))
    users = config.users
    n = len(users)
    part = _Partial(n)
    res = [_Reservoir(config.reservoir_size, aux) for _ in range(n)]
    state = policy.new_state()
    total = config.warmup_slots + config.num_slots
    done = 0
    rows = np.arange(BATCH_SLOTS)
    while done < total:
        b = min(BATCH_SLOTS, total - done)
        snr = np.column_stack([usr.channel.sample(rng, b) for usr in users])
        u = np.column_stack([usr.channel.cdf_values(snr[:, i], rng) for i, usr in enumerate(users)])
        dec = policy.decide(snr, u, rng, state)
        skip = max(config.warmup_slots - done, 0)
        done += b
        if skip >= b:
            continue
        keep = slice(skip, b)
        sel = dec.selected[keep]
        snr_k, u_k = snr[keep], u[keep]
        r = rows[: b - skip]
        sel_snr = snr_k[r, sel]
        sel_u = u_k[r, sel]
        rates = np.empty(sel.size)
        for i, usr in enumerate(users):
            mask = sel == i
            rates[mask] = usr.rate_fn(sel_snr[mask])
        part.slots += sel.size
        part.counts += np.bincount(sel, minlength=n)
        part.rate_sum += np.bincount(sel, weights=rates, minlength=n)
        part.rate_sq += np.bincount(sel, weights=rates * rates, minlength=n)
        part.cdf_sum += np.bincount(sel, weights=sel_u, minlength=n)
        part.cdf_sq += np.bincount(sel, weights=sel_u * sel_u, minlength=n)
        if dec.fed_back is None:
            fb_per_slot = np.full(sel.size, float(n))
            part.fed_counts += sel.size
        else:
            fed = dec.fed_back[keep]
            fb_per_slot = fed.sum(axis=1).astype(float)
            part.fed_counts += fed.sum(axis=0)
        part.fb_total += fb_per_slot.sum()
        part.fb_sq += (fb_per_slot * fb_per_slot).sum()
        nfb = dec.nfb[keep] if dec.nfb is not None else None
        if nfb is not None:
            part.nfb_slots += int(nfb.sum())
            part.nfb_counts += np.bincount(sel[nfb], minlength=n)
        for i in range(n):
            res[i].extend(sel_snr[sel == i])
        if trace_sink is not None:
            base = done - b + skip - config.warmup_slots
            for t in range(sel.size):
                fed_row = (
                    tuple(bool(x) for x in dec.fed_back[skip + t])
                    if dec.fed_back is not None else (True,) * n
                )
                kind = SlotKind.NFB if nfb is not None and nfb[t] else SlotKind.FB
                trace_sink(SlotTrace(
                    base + t, tuple(snr_k[t].tolist()), tuple(u_k[t].tolist()),
                    fed_row, int(sel[t]), kind, float(rates[t]),
                ))
    part.samples = [r_.sample() for r_ in res]
    return part


# -- report -------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Aggregated metrics over all replicas.

    Standard errors are computed from the pooled slots, which are i.i.d.
    for every random policy; ``*_replica_se`` fields give the spread of the
    replica means when more than one replica ran.
    """

    policy: str
    num_slots: int
    num_replicas: int
    target_car: np.ndarray
    selections: np.ndarray
    car: np.ndarray
    car_se: np.ndarray
    throughput: np.ndarray
    throughput_se: np.ndarray
    feedback_per_slot: float
    feedback_se: float
    feedback_by_user: np.ndarray
    nfb_frequency: float
    nfb_se: float
    nfb_selections: np.ndarray
    d_mean: np.ndarray
    d_se: np.ndarray
    selected_snr: list
    car_replica_se: np.ndarray | None = None
    throughput_replica_se: np.ndarray | None = None

    @property
    def sum_throughput(self) -> float:
        return float(self.throughput.sum())

    def rows(self) -> list[dict]:
        """One flat record per user, for CSV output."""
        out = []
        for i in range(len(self.car)):
            out.append({
                "user": i,
                "target_car": float(self.target_car[i]),
                "car": float(self.car[i]),
                "car_se": float(self.car_se[i]),
                "throughput": float(self.throughput[i]),
                "throughput_se": float(self.throughput_se[i]),
                "d_mean": float(self.d_mean[i]),
                "d_se": float(self.d_se[i]),
                "feedback_rate": float(self.feedback_by_user[i]),
            })
        return out

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "num_slots": self.num_slots,
            "num_replicas": self.num_replicas,
            "feedback_per_slot": self.feedback_per_slot,
            "feedback_se": self.feedback_se,
            "nfb_frequency": self.nfb_frequency,
            "nfb_se": self.nfb_se,
            "users": self.rows(),
        }


def _merge(config: SimConfig, parts: Sequence[_Partial]) -> MetricsReport:
    n = len(config.users)
    tot = _Partial(n)
    for p in parts:  # fixed order keeps floating-point sums reproducible
        tot.slots += p.slots
        tot.counts += p.counts
        tot.rate_sum += p.rate_sum
        tot.rate_sq += p.rate_sq
        tot.cdf_sum += p.cdf_sum
        tot.cdf_sq += p.cdf_sq
        tot.fed_counts += p.fed_counts
        tot.nfb_counts += p.nfb_counts
        tot.fb_total += p.fb_total
        tot.fb_sq += p.fb_sq
        tot.nfb_slots += p.nfb_slots
    N = tot.slots
    car = tot.counts / N
    car_se = np.sqrt(car * (1 - car) / N)
    thr = tot.rate_sum / N
    thr_var = np.maximum(tot.rate_sq / N - thr * thr, 0.0)
    thr_se = np.sqrt(thr_var / N)
    fb = tot.fb_total / N
    fb_se = math.sqrt(max(tot.fb_sq / N - fb * fb, 0.0) / N)
    nfb = tot.nfb_slots / N
    nfb_se = math.sqrt(nfb * (1 - nfb) / N)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = tot.cdf_sum / tot.counts
        d_var = np.maximum(tot.cdf_sq / tot.counts - d * d, 0.0)
        d_se = np.sqrt(d_var / tot.counts)
    samples = [np.sort(np.concatenate([p.samples[i] for p in parts])) for i in range(n)]
    car_rep = thr_rep = None
    if len(parts) > 1:
        cars = np.array([p.counts / p.slots for p in parts])
        thrs = np.array([p.rate_sum / p.slots for p in parts])
        car_rep = cars.std(axis=0, ddof=1) / math.sqrt(len(parts))
        thr_rep = thrs.std(axis=0, ddof=1) / math.sqrt(len(parts))
    return MetricsReport(
        policy=config.policy,
        num_slots=N,
        num_replicas=len(parts),
        target_car=access_ratios(config.users),
        selections=tot.counts,
        car=car,
        car_se=car_se,
        throughput=thr,
        throughput_se=thr_se,
        feedback_per_slot=fb,
        feedback_se=fb_se,
        feedback_by_user=tot.fed_counts / N,
        nfb_frequency=nfb,
        nfb_se=nfb_se,
        nfb_selections=tot.nfb_counts,
        d_mean=d,
        d_se=d_se,
        selected_snr=samples,
        car_replica_se=car_rep,
        throughput_replica_se=thr_rep,
    )


def run(config: SimConfig, trace_sink=None) -> MetricsReport:
    """Simulate ``num_slots`` slots in each of ``num_replicas`` replicas.

    ``trace_sink`` may be a callable receiving :class:`SlotTrace` records or
    a path, in which case records are written as JSON lines. Traces force a
    single worker so their order is deterministic.
    """
    policy = build_policy(config)
    seeds = replica_seeds(config.master_seed, config.num_replicas)
    fh = None
    sink = trace_sink
    if isinstance(trace_sink, (str, bytes)) or hasattr(trace_sink, "__fspath__"):
        fh = open(trace_sink, "w")
        sink = lambda rec: fh.write(json.dumps(rec.to_dict()) + "\n")  # noqa: E731
    try:
        workers = 1 if sink is not None else max(1, min(config.workers, config.num_replicas))
        if workers == 1:
            parts = [_run_replica(config, policy, s, sink, i) for i, s in enumerate(seeds)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                futs = [ex.submit(_run_replica, config, policy, s, None, i) for i, s in enumerate(seeds)]
                parts = [f.result() for f in futs]
    finally:
        if fh is not None:
            fh.close()
    return _merge(config, parts)


# -- single-user genie --------------------------------------------------------


@dataclass
class GenieReport:
    alpha: float
    serve_frequency: float
    serve_se: float
    throughput: float
    throughput_se: float
    d_mean: float
    d_se: float


def simulate_genie(user: UserSpec, alpha: float, num_slots: int, seed: int = 0) -> GenieReport:
    """Serve one user iff F(snr) >= 1 - alpha; validates the throughput upper bound."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    served = 0
    rate_sum = rate_sq = cdf_sum = cdf_sq = 0.0
    done = 0
    while done < num_slots:
        b = min(BATCH_SLOTS, num_slots - done)
        snr = user.channel.sample(rng, b)
        u = user.channel.cdf_values(snr, rng)
        serve = u >= 1.0 - alpha
        r = user.rate_fn(snr[serve])
        served += int(serve.sum())
        rate_sum += float(r.sum())
        rate_sq += float((r * r).sum())
        cdf_sum += float(u[serve].sum())
        cdf_sq += float((u[serve] ** 2).sum())
        done += b
    freq = served / num_slots
    thr = rate_sum / num_slots
    d = cdf_sum / served if served else math.nan
    return GenieReport(
        alpha=alpha,
        serve_frequency=freq,
        serve_se=math.sqrt(freq * (1 - freq) / num_slots),
        throughput=thr,
        throughput_se=math.sqrt(max(rate_sq / num_slots - thr * thr, 0.0) / num_slots),
        d_mean=d,
        d_se=math.sqrt(max(cdf_sq / served - d * d, 0.0) / served) if served else math.nan,
    )


# -- goodness of fit ----------------------------------------------------------


def ks_distance(sample, reference_cdf) -> float:
    """Sup-norm distance between the empirical CDF of ``sample`` and ``reference_cdf``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(reference_cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_critical(n: int, level: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value; 1.63/sqrt(n) at the 1% level."""
    c = {0.01: 1.63, 0.05: 1.36, 0.10: 1.22}.get(level)
    if c is None:
        c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c / math.sqrt(n)

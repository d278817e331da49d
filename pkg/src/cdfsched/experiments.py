"""Named experiments: declarative specs in, CSV tables and a run manifest out.

A spec is one TOML document (see ``specs/*.toml`` for the built-ins and
README for the schema). Each ``kind`` maps to a runner that evaluates the
analytical curves and, where it makes sense, Monte Carlo estimates for
every sweep point. Points are independent and run in a thread pool; each
point derives its own seed from the spec seed and its position, so the
tables do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import analysis
from .fading import ChannelModel, RateFunction
from .fairness import d_ub, fairness_from_metrics, i_d_cs
from .montecarlo import POLICIES, SimConfig, run
from .sched import CalibrationSchedule, UserSpec, access_ratios, calibrate_offsets

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

SWEEP_AXES = ("alpha", "p", "snr", "snr_db", "inv_alpha", "weight_split")

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "SpecError",
    "KINDS",
    "builtin_names",
    "load_spec",
    "run_experiment",
    "write_outputs",
]


class SpecError(ValueError):
    """The experiment document is malformed or names something unknown."""


# -- spec ---------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    name: str
    kind: str
    scenario: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    policies: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    output: str = ""
    seed: int = 0
    slots: int = 1_000_000
    replicas: int = 8
    monte_carlo: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown experiment kind {self.kind!r}; expected one of {sorted(KINDS)}")
        want = KINDS[self.kind].axis
        axis = self.sweep.get("axis")
        if axis != want:
            raise SpecError(f"kind {self.kind!r} sweeps over {want!r}, got axis {axis!r}")
        values = self.sweep.get("values")
        if not values:
            raise SpecError("sweep.values must be a nonempty list")
        _check_axis(axis, values, self.kind)
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise SpecError(f"unknown policies {bad}; expected a subset of {POLICIES}")
        if self.slots < 1 or self.replicas < 1:
            raise SpecError("slots and replicas must be positive")
        if self.slots < self.replicas:
            raise SpecError("slots is the total per point and must be at least replicas")
        if not self.output:
            self.output = f"{self.name}.csv"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown top-level keys {sorted(extra)}")
        for key in ("name", "kind"):
            if key not in doc:
                raise SpecError(f"missing required key {key!r}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_axis(axis: str, values, kind: str):
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise SpecError("sweep values must be finite")
    if axis in ("alpha", "weight_split"):
        ok = np.all((v > 0) & (v < 1))
        rng = "(0, 1)"
    elif axis == "p":
        ok = np.all((v > 0) & (v < 1)) if kind.startswith("feedback") else np.all((v >= 0) & (v < 1))
        rng = "(0, 1)" if kind.startswith("feedback") else "[0, 1)"
    elif axis == "snr":
        ok = np.all(v >= 0)
        rng = "[0, inf)"
    elif axis == "snr_db":
        ok = np.all((v >= -30) & (v <= 60))
        rng = "[-30, 60] dB"
    else:  # inv_alpha
        ok = np.all((v >= 1) & (v == np.round(v)))
        rng = "integers >= 1"
    if not ok:
        raise SpecError(f"sweep values for axis {axis!r} must lie in {rng}")


def builtin_names() -> list[str]:
    files = resources.files("cdfsched").joinpath("specs")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def load_spec(ref: str | Path) -> ExperimentSpec:
    """Load a built-in spec by name, a TOML spec file, or a run manifest (JSON)."""
    ref = str(ref)
    path = Path(ref)
    if path.suffix == ".json" and path.is_file():
        doc = json.loads(path.read_text())
        if "config" not in doc:
            raise SpecError(f"{ref} is not a run manifest")
        return ExperimentSpec.from_dict(doc["config"])
    if path.suffix == ".toml" and path.is_file():
        return ExperimentSpec.from_dict(tomllib.loads(path.read_text()))
    if ref in builtin_names():
        text = resources.files("cdfsched").joinpath("specs", f"{ref}.toml").read_text()
        return ExperimentSpec.from_dict(tomllib.loads(text))
    raise SpecError(f"unknown spec {ref!r}; built-ins are {builtin_names()}")


# -- execution context --------------------------------------------------------


@dataclass
class _Ctx:
    spec: ExperimentSpec
    workers: int
    failures: list = field(default_factory=list)

    @property
    def per_replica(self) -> int:
        return self.spec.slots // self.spec.replicas

    def seed_for(self, *key) -> int:
        ss = np.random.SeedSequence([int(self.spec.seed), *[int(k) for k in key]])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def simulate(self, users, policy: str, key: tuple, params=None, inner_workers: int = 1):
        """Monte Carlo for one point; returns None (and records why) on failure."""
        params = dict(params or {})
        try:
            if policy in ("liu", "df"):
                sched = CalibrationSchedule(**self.spec.calibration)
                params["offsets"] = calibrate_offsets(
                    users, access_ratios(users), policy, sched, seed=self.seed_for(*key, 1)
                )
            cfg = SimConfig(
                users=users, policy=policy, params=params,
                num_slots=self.per_replica, num_replicas=self.spec.replicas,
                master_seed=self.seed_for(*key, 0), workers=inner_workers,
            )
            return run(cfg)
        except Exception as exc:  # recorded; the run is marked incomplete
            log.warning("point %s policy %s failed: %s", key, policy, exc)
            self.failures.append({"point": list(key), "policy": policy, "error": f"{type(exc).__name__}: {exc}"})
            return None

    def map_points(self, fn: Callable[[int, object, int], list], points: list) -> list:
        """Evaluate ``fn(index, point, inner_workers)`` for every point, rows kept in order."""
        if self.workers > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as ex:
                chunks = list(ex.map(lambda ip: fn(ip[0], ip[1], 1), enumerate(points)))
        else:
            chunks = [fn(i, pt, self.workers) for i, pt in enumerate(points)]
        return [row for chunk in chunks for row in chunk]


def _users_from(entries, weights) -> list[UserSpec]:
    if len(entries) != len(weights):
        raise SpecError(f"scenario has {len(entries)} users but {len(weights)} weights were given")
    return [
        UserSpec(i, float(w), ChannelModel.from_config(e["channel"]), RateFunction.from_config(e.get("rate")))
        for i, (e, w) in enumerate(zip(entries, weights))
    ]


def _scenario_users(spec: ExperimentSpec) -> list[dict]:
    users = spec.scenario.get("users")
    if not users:
        raise SpecError(f"kind {spec.kind!r} needs scenario.users")
    return users


def _single_channel(spec: ExperimentSpec) -> tuple[ChannelModel, RateFunction]:
    cfg = spec.scenario.get("channel", {"type": "rayleigh", "mean_snr_db": 0.0})
    return ChannelModel.from_config(cfg), RateFunction.from_config(spec.scenario.get("rate"))


def _mc_enabled(spec: ExperimentSpec, value, key: str) -> bool:
    if not spec.monte_carlo:
        return False
    subset = spec.params.get(key)
    if subset is None:
        return True
    return any(math.isclose(float(value), float(s), rel_tol=1e-12, abs_tol=1e-15) for s in subset)


def _gain(report, user: int, alpha: float, e_r: float):
    if report is None:
        return None, None
    scale = alpha * e_r
    return float(report.throughput[user] / scale), float(report.throughput_se[user] / scale)


# -- runners ------------------------------------------------------------------


@dataclass(frozen=True)
class _Kind:
    axis: str
    columns: dict
    runner: Callable


def _run_cdf_curves(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    snr_grid = [float(v) for v in spec.sweep["values"]]
    m_values = spec.params.get("m_values", [1, 2, 4, 10])
    mean_db = float(spec.params.get("mean_snr_db", 0.0))

    def point(i, m, _inner):
        ch = ChannelModel.from_config({"type": "nakagami", "m": int(m), "mean_snr_db": mean_db})
        exact = ch.cdf(np.asarray(snr_grid))
        mc = se = [None] * len(snr_grid)
        if spec.monte_carlo:
            rng = np.random.Generator(np.random.PCG64(ctx.seed_for(i)))
            draws = np.sort(ch.sample(rng, spec.slots))
            emp = np.searchsorted(draws, snr_grid, side="right") / draws.size
            mc = [float(v) for v in emp]
            se = [math.sqrt(v * (1 - v) / draws.size) for v in emp]
        return [
            {"m": int(m), "snr": s, "cdf": float(f), "cdf_mc": c, "cdf_se": e}
            for s, f, c, e in zip(snr_grid, exact, mc, se)
        ]

    return ctx.map_points(point, list(m_values))


def _two_user_alpha_points(spec):
    return [float(a) for a in spec.sweep["values"]]


def _analytic_cs_two(users):
    a = access_ratios(users)
    return [analysis.s_cs(u.channel, u.rate_fn, float(ai)) for u, ai in zip(users, a)]


def _run_sum_throughput(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    entries = _scenario_users(spec)

    def point(i, a1, inner):
        users = _users_from(entries, [a1, 1.0 - a1])
        alphas = access_ratios(users)
        rows = []
        for j, pol in enumerate(spec.policies):
            analytic = None
            if pol == "cs":
                analytic = sum(_analytic_cs_two(users))
            elif pol == "rrs":
                analytic = sum(float(ai) * analysis.mean_rate(u.channel, u.rate_fn) for u, ai in zip(users, alphas))
            rep = ctx.simulate(users, pol, (i, j), inner_workers=inner) if spec.monte_carlo else None
            rows.append({
                "alpha1": a1,
                "policy": pol,
                "sum_throughput_analytic": analytic,
                "sum_throughput_mc": None if rep is None else rep.sum_throughput,
                "sum_throughput_se": None if rep is None else float(np.sqrt(np.sum(rep.throughput_se**2))),
                "car0_mc": None if rep is None else float(rep.car[0]),
                "car1_mc": None if rep is None else float(rep.car[1]),
            })
        return rows

    return ctx.map_points(point, _two_user_alpha_points(spec))


def _run_gain_vs_car(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    entries = _scenario_users(spec)

    def point(i, a1, inner):
        users = _users_from(entries, [a1, 1.0 - a1])
        alphas = access_ratios(users)
        e_r = [analysis.mean_rate(u.channel, u.rate_fn) for u in users]
        g_cs = [analysis.s_cs(u.channel, u.rate_fn, float(a)) / (a * e) for u, a, e in zip(users, alphas, e_r)]
        g_ub = [analysis.s_ub(u.channel, u.rate_fn, float(a)) / (a * e) for u, a, e in zip(users, alphas, e_r)]
        rows = []
        for j, pol in enumerate(spec.policies):
            rep = ctx.simulate(users, pol, (i, j), inner_workers=inner) if spec.monte_carlo else None
            for k, u in enumerate(users):
                g, se = _gain(rep, k, float(alphas[k]), e_r[k])
                rows.append({
                    "alpha1": a1,
                    "user": k,
                    "car": float(alphas[k]),
                    "policy": pol,
                    "gain_mc": g,
                    "gain_se": se,
                    "gain_cs_analytic": g_cs[k],
                    "gain_ub_analytic": g_ub[k],
                })
        return rows

    return ctx.map_points(point, _two_user_alpha_points(spec))


def _analytic_i_d(pol: str, alphas) -> list:
    if pol == "cs":
        return [float(i_d_cs(a)) for a in alphas]
    if pol == "rrs":
        return [0.5 / float(d_ub(a)) for a in alphas]
    return [None] * len(alphas)


def _run_id_per_user(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    entries = _scenario_users(spec)

    def point(i, w0, inner):
        users = _users_from(entries, [w0, 1.0 - w0])
        alphas = access_ratios(users)
        rows = []
        for j, pol in enumerate(spec.policies):
            rep = ctx.simulate(users, pol, (i, j), inner_workers=inner) if spec.monte_carlo else None
            fr = None
            if rep is not None:
                try:
                    fr = fairness_from_metrics(rep)
                except ValueError as exc:
                    ctx.failures.append({"point": [i, j], "policy": pol, "error": str(exc)})
            analytic = _analytic_i_d(pol, alphas)
            for k in range(len(users)):
                rows.append({
                    "weight_split": w0,
                    "policy": pol,
                    "user": k,
                    "car": float(alphas[k]),
                    "d_mc": None if fr is None else float(fr.d_value[k]),
                    "i_d_mc": None if fr is None else float(fr.i_d[k]),
                    "i_d_se": None if fr is None else float(fr.estimator_stderr[k]),
                    "i_d_analytic": analytic[k],
                })
        return rows

    return ctx.map_points(point, [float(v) for v in spec.sweep["values"]])


def _run_qfi_vs_car(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    entries = _scenario_users(spec)

    def point(i, a1, inner):
        users = _users_from(entries, [a1, 1.0 - a1])
        alphas = access_ratios(users)
        rows = []
        for j, pol in enumerate(spec.policies):
            rep = ctx.simulate(users, pol, (i, j), inner_workers=inner) if spec.monte_carlo else None
            fr = None
            if rep is not None:
                try:
                    fr = fairness_from_metrics(rep)
                except ValueError as exc:
                    ctx.failures.append({"point": [i, j], "policy": pol, "error": str(exc)})
            analytic = _analytic_i_d(pol, alphas)
            rows.append({
                "alpha1": a1,
                "policy": pol,
                "qfi_mc": None if fr is None else fr.qfi,
                "qfi_se": None if fr is None else fr.qfi_se,
                "qfi_analytic": None if analytic[0] is None else min(analytic),
            })
        return rows

    return ctx.map_points(point, _two_user_alpha_points(spec))


def _run_gain_vs_snr(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    entries = _scenario_users(spec)
    car = float(spec.params.get("observed_car", 0.1))
    points = [(float(db), obs) for db in spec.sweep["values"] for obs in range(len(entries))]

    def point(i, pt, inner):
        db, obs = pt
        ents = []
        for e in entries:
            chan = {k: v for k, v in e["channel"].items() if k not in ("mean_snr", "mean_snr_db")}
            ents.append({**e, "channel": {**chan, "mean_snr_db": db}})
        weights = [car if k == obs else (1.0 - car) / (len(ents) - 1) for k in range(len(ents))]
        users = _users_from(ents, weights)
        u = users[obs]
        e_r = analysis.mean_rate(u.channel, u.rate_fn)
        g_cs = analysis.s_cs(u.channel, u.rate_fn, car) / (car * e_r)
        rows = []
        for j, pol in enumerate(spec.policies):
            rep = ctx.simulate(users, pol, (i, j), inner_workers=inner) if spec.monte_carlo else None
            g, se = _gain(rep, obs, car, e_r)
            rows.append({
                "snr_db": db,
                "observed_user": obs,
                "m": u.channel.m,
                "policy": pol,
                "gain_mc": g,
                "gain_se": se,
                "gain_cs_analytic": g_cs,
            })
        return rows

    return ctx.map_points(point, points)


def _feedback_rows(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    ch, rate = _single_channel(spec)
    n_values = [int(n) for n in spec.params.get("n_values", [5, 10, 100])]
    points = [(float(p), n) for p in spec.sweep["values"] for n in n_values]

    def point(i, pt, inner):
        p, n = pt
        mu, equal, ln_bound = analysis.feedback_overhead([1.0] * n, p)
        rep = None
        if _mc_enabled(spec, p, "mc_p"):
            users = [UserSpec(k, 1.0, ch, rate) for k in range(n)]
            rep = ctx.simulate(users, "csfr", (i,), {"p": p}, inner_workers=inner)
        return [{
            "p": p,
            "n": n,
            "mu": mu,
            "mu_equal_bound": equal,
            "neg_ln_p": ln_bound,
            "ratio": mu / n,
            "mu_mc": None if rep is None else rep.feedback_per_slot,
            "mu_se": None if rep is None else rep.feedback_se,
            "ratio_mc": None if rep is None else rep.feedback_per_slot / n,
            "ratio_se": None if rep is None else rep.feedback_se / n,
            "nfb_mc": None if rep is None else rep.nfb_frequency,
        }]

    return ctx.map_points(point, points)


def _observed_pair(ch, rate, alpha) -> list[UserSpec]:
    # per-user CS / CS-FR laws depend only on the user's own CAR and channel,
    # so one partner holding the remaining share reproduces any population
    if alpha >= 1.0:
        return [UserSpec(0, 1.0, ch, rate)]
    return [UserSpec(0, alpha, ch, rate), UserSpec(1, 1.0 - alpha, ch, rate)]


def _mc_csfr(ctx, ch, rate, alpha, p, key, inner):
    users = _observed_pair(ch, rate, alpha)
    if p == 0.0:
        return ctx.simulate(users, "cs", key, inner_workers=inner)
    return ctx.simulate(users, "csfr", key, {"p": p}, inner_workers=inner)


def _s_csfr_closed(ch: ChannelModel, K: int, p: float) -> float:
    alpha = 1.0 / K
    if p == 0.0:
        return alpha * analysis.s_nakagami_closed(ch, 0.0, K)
    x = p**alpha
    full = analysis.s_nakagami_closed(ch, 0.0, 1)
    upper1 = analysis.s_nakagami_closed(ch, x, 1)
    return alpha * analysis.s_nakagami_closed(ch, x, K) + alpha * p ** (1 - alpha) * (full - upper1)


def _run_gain_vs_inv_alpha(ctx: _Ctx) -> list[dict]:
    spec = ctx.spec
    _, rate = _single_channel(spec)
    mean_db = float(spec.params.get("mean_snr_db", 0.0))
    m_values = [int(m) for m in spec.params.get("m_values", [1, 4])]
    p_values = [float(p) for p in spec.params.get("p_values", [0.0, 0.05, 0.2])]
    closed_max = int(spec.params.get("closed_max_k", 10))
    points = [(m, p, int(k)) for m in m_values for p in p_values for k in spec.sweep["values"]]

    def point(i, pt, inner):
        m, p, K = pt
        ch = ChannelModel.from_config({"type": "nakagami", "m": m, "mean_snr_db": mean_db})
        alpha = 1.0 / K
        e_r = analysis.mean_rate(ch, rate)
        s = analysis.s_csfr(ch, rate, alpha, p)
        closed = None
        if rate.kind.value == "shannon" and K <= closed_max:
            closed = _s_csfr_closed(ch, K, p) / (alpha * e_r)
        rep = _mc_csfr(ctx, ch, rate, alpha, p, (i,), inner) if _mc_enabled(spec, K, "mc_inv_alpha") else None
        g, se = _gain(rep, 0, alpha, e_r)
        return [{
            "m": m,
            "p": p,
            "inv_alpha": K,
            "gain_analytic": s / (alpha * e_r),
            "gain_closed": closed,
            "gain_mc": g,
            "gain_se": se,
        }]

    return ctx.map_points(point, points)


def _csfr_grid(ctx: _Ctx, with_ratio: bool) -> list[dict]:
    spec = ctx.spec
    ch, rate = _single_channel(spec)
    alphas = [float(a) for a in spec.params.get("alphas", [0.05, 0.1, 0.25, 0.5])]
    points = [(a, float(p)) for a in alphas for p in spec.sweep["values"]]
    e_r = analysis.mean_rate(ch, rate)

    def point(i, pt, inner):
        alpha, p = pt
        s_cs = analysis.s_cs(ch, rate, alpha)
        s_fr = analysis.s_csfr(ch, rate, alpha, p)
        rep = _mc_csfr(ctx, ch, rate, alpha, p, (i,), inner) if _mc_enabled(spec, p, "mc_p") else None
        if not with_ratio:
            g, se = _gain(rep, 0, alpha, e_r)
            return [{
                "alpha": alpha,
                "p": p,
                "gain_csfr_analytic": s_fr / (alpha * e_r),
                "gain_cs_analytic": s_cs / (alpha * e_r),
                "gain_mc": g,
                "gain_se": se,
            }]
        verdict = analysis.csfr_bounds(alpha, p, s_cs, s_fr)
        return [{
            "alpha": alpha,
            "p": p,
            "ratio_analytic": verdict.ratio,
            "ratio_lower_bound": verdict.lower,
            "ratio_floor": verdict.floor,
            "ratio_mc": None if rep is None else float(rep.throughput[0] / s_cs),
            "ratio_se": None if rep is None else float(rep.throughput_se[0] / s_cs),
        }]

    return ctx.map_points(point, points)


KINDS: dict[str, _Kind] = {
    "cdf_curves": _Kind("snr", {
        "m": "Nakagami shape parameter",
        "snr": "linear SNR",
        "cdf": "exact CDF F(snr)",
        "cdf_mc": "empirical CDF from `slots` draws",
        "cdf_se": "binomial standard error of cdf_mc",
    }, _run_cdf_curves),
    "sum_throughput": _Kind("alpha", {
        "alpha1": "CAR of user 0 (user 1 gets 1 - alpha1)",
        "policy": "scheduler",
        "sum_throughput_analytic": "closed-form sum throughput [bit/s/Hz] (cs, rrs only)",
        "sum_throughput_mc": "Monte Carlo sum throughput",
        "sum_throughput_se": "standard error of sum_throughput_mc",
        "car0_mc": "empirical CAR of user 0",
        "car1_mc": "empirical CAR of user 1",
    }, _run_sum_throughput),
    "gain_vs_car": _Kind("alpha", {
        "alpha1": "CAR of user 0",
        "user": "observed user",
        "car": "CAR of the observed user",
        "policy": "scheduler",
        "gain_mc": "throughput / (car * E[R]) from Monte Carlo",
        "gain_se": "standard error of gain_mc",
        "gain_cs_analytic": "CS gain from quadrature",
        "gain_ub_analytic": "upper-bound gain from quadrature",
    }, _run_gain_vs_car),
    "id_per_user": _Kind("weight_split", {
        "weight_split": "weight of user 0 (user 1 gets the rest)",
        "policy": "scheduler",
        "user": "user index",
        "car": "CAR of the user",
        "d_mc": "mean CDF value at selection",
        "i_d_mc": "D / D_UB",
        "i_d_se": "standard error of i_d_mc",
        "i_d_analytic": "closed form (cs, rrs only)",
    }, _run_id_per_user),
    "qfi_vs_car": _Kind("alpha", {
        "alpha1": "CAR of user 0",
        "policy": "scheduler",
        "qfi_mc": "min over users of I_D",
        "qfi_se": "standard error of the minimizing user's I_D",
        "qfi_analytic": "closed form (cs, rrs only)",
    }, _run_qfi_vs_car),
    "gain_vs_snr": _Kind("snr_db", {
        "snr_db": "average SNR of both users [dB]",
        "observed_user": "user whose CAR is params.observed_car",
        "m": "Nakagami shape of the observed user",
        "policy": "scheduler",
        "gain_mc": "observed user's throughput gain over RRS",
        "gain_se": "standard error of gain_mc",
        "gain_cs_analytic": "CS gain from quadrature",
    }, _run_gain_vs_snr),
    "feedback_overhead": _Kind("p", {
        "p": "no-feedback probability",
        "n": "number of equally weighted users",
        "mu": "mean feedback count per slot",
        "mu_equal_bound": "n (1 - p^(1/n))",
        "neg_ln_p": "-ln p (n -> infinity)",
        "ratio": "mu / n",
        "mu_mc": "Monte Carlo feedback count",
        "mu_se": "standard error of mu_mc",
        "ratio_mc": "mu_mc / n",
        "ratio_se": "standard error of ratio_mc",
        "nfb_mc": "empirical fraction of no-feedback slots",
    }, _feedback_rows),
    "gain_vs_inv_alpha": _Kind("inv_alpha", {
        "m": "Nakagami shape",
        "p": "no-feedback probability (0 = plain CS)",
        "inv_alpha": "1 / CAR",
        "gain_analytic": "S_CSFR / (alpha E[R]) from quadrature",
        "gain_closed": "same from the Nakagami closed form (Shannon rate)",
        "gain_mc": "Monte Carlo gain",
        "gain_se": "standard error of gain_mc",
    }, _run_gain_vs_inv_alpha),
    "gain_vs_nfb": _Kind("p", {
        "alpha": "CAR of the observed user",
        "p": "no-feedback probability",
        "gain_csfr_analytic": "CS-FR gain from quadrature",
        "gain_cs_analytic": "CS gain (p = 0)",
        "gain_mc": "Monte Carlo CS-FR gain",
        "gain_se": "standard error of gain_mc",
    }, lambda ctx: _csfr_grid(ctx, False)),
    "csfr_cs_ratio": _Kind("p", {
        "alpha": "CAR of the observed user",
        "p": "no-feedback probability",
        "ratio_analytic": "S_CSFR / S_CS",
        "ratio_lower_bound": "1 - p + alpha p^(2 - alpha)",
        "ratio_floor": "1 - p",
        "ratio_mc": "Monte Carlo S_CSFR / analytical S_CS",
        "ratio_se": "standard error of ratio_mc",
    }, lambda ctx: _csfr_grid(ctx, True)),
}
KINDS["feedback_ratio"] = _Kind("p", KINDS["feedback_overhead"].columns, _feedback_rows)


# -- results and output -------------------------------------------------------


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    columns: dict
    rows: list
    failures: list
    elapsed: float

    @property
    def complete(self) -> bool:
        return not self.failures

    def column(self, name: str, **where) -> list:
        return [r[name] for r in self.rows if all(r.get(k) == v for k, v in where.items())]

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# experiment: {self.spec.name}\n")
        buf.write(f"# kind: {self.spec.kind}\n")
        buf.write(f"# config_sha256: {self.spec.config_hash()}\n")
        buf.write(f"# seed: {self.spec.seed}\n")
        buf.write(f"# status: {'complete' if self.complete else 'incomplete'}\n")
        writer = csv.DictWriter(buf, fieldnames=list(self.columns), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row.get(k)) for k in self.columns})
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def run_experiment(spec: ExperimentSpec | str | Path, workers: int = 1) -> ExperimentResult:
    if not isinstance(spec, ExperimentSpec):
        spec = load_spec(spec)
    kind = KINDS[spec.kind]
    ctx = _Ctx(spec, max(1, int(workers)))
    t0 = time.perf_counter()
    rows = kind.runner(ctx)
    return ExperimentResult(spec, kind.columns, rows, ctx.failures, time.perf_counter() - t0)


def _versions() -> dict:
    import mpmath
    import scipy

    from . import __version__

    return {
        "cdfsched": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
    }


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``<output>.csv`` and ``<name>.manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / Path(result.spec.output).name
    text = result.csv_text()
    csv_path.write_text(text)
    manifest = {
        "name": result.spec.name,
        "status": "complete" if result.complete else "incomplete",
        "failures": result.failures,
        "config": result.spec.to_dict(),
        "config_sha256": result.spec.config_hash(),
        "seed": result.spec.seed,
        "versions": _versions(),
        "columns": result.columns,
        "outputs": {csv_path.name: hashlib.sha256(text.encode()).hexdigest()},
        "elapsed_s": round(result.elapsed, 3),
    }
    man_path = out / f"{result.spec.name}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, man_path

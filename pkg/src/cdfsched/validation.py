"""Acceptance checks with fixed seeds, shared by the test suite and ``cdfsched validate``.

Every check returns a :class:`CheckResult`. The ``quick`` budget cuts the
Monte Carlo work by ten and widens absolute tolerances by sqrt(10), the
factor by which standard errors grow; tolerances stated in standard errors
stay as they are since the errors already scale.
"""
from __future__ import annotations

import dataclasses
import functools
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import analysis
from .experiments import load_spec, run_experiment
from .fading import ChannelModel, RateFunction
from .fairness import d_ub, fairness_from_metrics, i_d_cs
from .montecarlo import SimConfig, ks_critical, ks_distance, run
from .sched import UserSpec, calibrate_offsets

__all__ = ["Budget", "FULL", "QUICK", "CheckResult", "CHECKS", "run_check", "run_suite"]


@dataclass(frozen=True)
class Budget:
    slots: int
    ks_samples: int
    tol_scale: float
    instances: int


FULL = Budget(slots=1_000_000, ks_samples=100_000, tol_scale=1.0, instances=200)
QUICK = Budget(slots=100_000, ks_samples=10_000, tol_scale=math.sqrt(10.0), instances=50)


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    data: dict = field(default_factory=dict)


SHANNON = RateFunction.shannon()


def _rayleigh_nak4(snr_db: float = 0.0) -> tuple[ChannelModel, ChannelModel]:
    lin = 10.0 ** (snr_db / 10.0)
    return ChannelModel.rayleigh(lin), ChannelModel.nakagami(4, lin)


def _two_users(w0: float) -> list[UserSpec]:
    a, b = _rayleigh_nak4()
    return [UserSpec(0, w0, a), UserSpec(1, 1.0 - w0, b)]


def _offsets_for(users, policy: str, seed: int) -> dict:
    if policy not in ("liu", "df"):
        return {}
    targets = [u.weight for u in users]
    return {"offsets": calibrate_offsets(users, np.array(targets) / sum(targets), policy, seed=seed)}


# -- 1, 2: feedback overhead ----------------------------------------------------

FEEDBACK_P = 0.02
FEEDBACK_MU = {5: 2.71, 10: 3.24, 100: 3.84}
FEEDBACK_RATIO = {5: 54.3, 10: 32.4, 100: 3.8}
NEG_LN_P = 3.91


@functools.lru_cache(maxsize=None)
def _feedback_mc(n: int, slots: int):
    users = [UserSpec(i, 1.0, ChannelModel.rayleigh(1.0)) for i in range(n)]
    rep = run(SimConfig(users, "csfr", {"p": FEEDBACK_P}, num_slots=slots, master_seed=1000 + n))
    return rep.feedback_per_slot, rep.feedback_se


def check_feedback_numbers(budget: Budget = FULL) -> CheckResult:
    ok = round(-math.log(FEEDBACK_P), 2) == NEG_LN_P
    parts = [f"-ln p={-math.log(FEEDBACK_P):.4f}"]
    data = {}
    for n, target in FEEDBACK_MU.items():
        mu, _, _ = analysis.feedback_overhead([1.0] * n, FEEDBACK_P)
        mc, se = _feedback_mc(n, budget.slots)
        good = round(mu, 2) == target and abs(mc - mu) <= 3 * se
        ok &= good
        data[n] = (mu, mc, se)
        parts.append(f"n={n}: mu={mu:.4f} mc={mc:.4f}+-{se:.4f}")
    return CheckResult(1, "feedback overhead", ok, "; ".join(parts), data=data)


def check_feedback_ratios(budget: Budget = FULL) -> CheckResult:
    ok = True
    parts = []
    data = {}
    for n, target in FEEDBACK_RATIO.items():
        mu, _, _ = analysis.feedback_overhead([1.0] * n, FEEDBACK_P)
        mc, se = _feedback_mc(n, budget.slots)
        ratio = 100.0 * mu / n
        good = round(ratio, 1) == target and abs(mc - mu) / n <= 3 * se / n
        ok &= good
        data[n] = (ratio, 100.0 * mc / n, 100.0 * se / n)
        parts.append(f"n={n}: {ratio:.2f}% mc={100 * mc / n:.2f}%")
    return CheckResult(2, "feedback ratio", ok, "; ".join(parts), data=data)


# -- 3: closed form vs quadrature -------------------------------------------------

CLOSED_GRID = dict(m=(1, 2, 4), mean_snr=(1.0, 10.0), K=(1, 2, 5, 10), x=(0.0, 0.2, 0.5, 0.9))


def u_space_quadrature(channel: ChannelModel, x: float, K: int) -> float:
    """S(x, 1/K) for the Shannon rate as int_{x^K}^1 log2(1 + F^-1(u^(1/K))) du."""
    a = 1.0 / K

    def f(u):
        if u <= 0.0:
            return 0.0
        # complement 1 - u^a from its logarithm keeps F^-1 accurate near u = 1
        return math.log2(1.0 + channel.inverse_cdf(u**a, -math.expm1(a * math.log(u))))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, x**K, 1.0, limit=500, epsabs=0.0, epsrel=1e-10)
    return val


def check_closed_form(budget: Budget = FULL, closed: Callable | None = None) -> CheckResult:
    closed = closed or analysis.s_nakagami_closed
    worst = 0.0
    where = None
    for m, g, K, x in itertools.product(*CLOSED_GRID.values()):
        ch = ChannelModel.nakagami(m, g)
        ref = u_space_quadrature(ch, x, K)
        err = abs(closed(ch, x, K) - ref) / ref
        if err > worst:
            worst, where = err, (m, g, K, x)
    ok = worst < 1e-6
    return CheckResult(3, "closed form vs quadrature", ok,
                       f"max rel err {worst:.2e} at (m, mean, K, x)={where}", data={"worst": worst})


# -- 4, 5: selected-SNR laws ------------------------------------------------------


def _selected_sample(alpha: float, m: int, policy: str, params: dict, n_samples: int, seed: int):
    observed = ChannelModel.nakagami(m, 1.0)
    partner = ChannelModel.rayleigh(1.0) if m != 1 else ChannelModel.nakagami(4, 1.0)
    users = [UserSpec(0, alpha, observed), UserSpec(1, 1.0 - alpha, partner)]
    slots = int(math.ceil(1.05 * n_samples / alpha)) + 1000
    rep = run(SimConfig(users, policy, params, num_slots=slots, master_seed=seed, reservoir_size=n_samples))
    sample = rep.selected_snr[0]
    if sample.size < n_samples:
        raise RuntimeError(f"only {sample.size} selections of user 0")
    return observed, sample


def check_cs_law(budget: Budget = FULL) -> CheckResult:
    n = budget.ks_samples
    crit = ks_critical(n)
    ok = True
    parts = []
    for k, (alpha, m) in enumerate(itertools.product((0.1, 0.25, 0.5), (1, 4))):
        ch, sample = _selected_sample(alpha, m, "cs", {}, n, seed=400 + k)
        d = ks_distance(sample, lambda s: analysis.cs_selected_cdf(ch, alpha, s))
        d_neg = ks_distance(sample, ch.cdf)
        good = d < crit and d_neg > crit
        ok &= good
        parts.append(f"a={alpha},m={m}: D={d:.4f} neg={d_neg:.3f}")
    return CheckResult(4, "CS selected-SNR law", ok, f"crit={crit:.4f}; " + "; ".join(parts))


def check_csfr_law(budget: Budget = FULL) -> CheckResult:
    n = budget.ks_samples
    crit = ks_critical(n)
    ok = True
    parts = []
    for k, (alpha, p) in enumerate(itertools.product((0.25, 0.5), (0.05, 0.2))):
        ch, sample = _selected_sample(alpha, 1, "csfr", {"p": p}, n, seed=500 + k)
        d = ks_distance(sample, lambda s: analysis.csfr_selected_cdf(ch, alpha, p, s))
        # the lower branch carries probability p^(1-a) * p^a = p
        knee = ch.inverse_cdf(p**alpha)
        below = float(np.mean(sample < knee))
        band = 3.0 * math.sqrt(p * (1 - p) / n)
        good = d < crit and 0.0 < below < 1.0 and abs(below - p) <= band
        ok &= good
        parts.append(f"a={alpha},p={p}: D={d:.4f} lower={below:.4f}")
    return CheckResult(5, "CS-FR selected-SNR law", ok, f"crit={crit:.4f}; " + "; ".join(parts))


# -- 6: CAR satisfaction ------------------------------------------------------------

CAR_POLICIES = ("cs", "csfr", "rrs", "liu", "df")


def check_car(budget: Budget = FULL) -> CheckResult:
    tol = 0.005 * budget.tol_scale
    worst = 0.0
    ok = True
    parts = []
    for t, w0 in enumerate((0.7, 0.5)):
        users = _two_users(w0)
        for j, pol in enumerate(CAR_POLICIES):
            seed = 600 + 10 * t + j
            params = {"p": 0.1} if pol == "csfr" else _offsets_for(users, pol, seed + 5000)
            rep = run(SimConfig(users, pol, params, num_slots=budget.slots, master_seed=seed))
            err = float(np.max(np.abs(rep.car - [w0, 1 - w0])))
            worst = max(worst, err)
            ok &= err < tol
            parts.append(f"{pol}@{w0}:{err:.4f}")
    return CheckResult(6, "CAR satisfaction", ok, f"max err {worst:.4f} (tol {tol:.4f}); " + " ".join(parts))


# -- 7: CS to upper-bound ratio ------------------------------------------------------

FLOORS = {(0.0, 1): 0.88, (0.0, 4): 0.93, (10.0, 1): 0.91, (10.0, 4): 0.95}


def check_ub_ratio(budget: Budget = FULL) -> CheckResult:
    grid = np.linspace(0.05, 1.0, 20)
    ok = True
    parts = []
    for (db, m), floor in FLOORS.items():
        ch = ChannelModel.nakagami(m, 10.0 ** (db / 10.0))
        r = min(analysis.s_cs(ch, SHANNON, a) / analysis.s_ub(ch, SHANNON, a) for a in grid)
        ok &= r >= floor
        parts.append(f"{db:g}dB m={m}: {r:.4f}>={floor}")
    return CheckResult(7, "S_CS / S_UB floor", ok, "; ".join(parts))


# -- 8: CS-FR sandwich ----------------------------------------------------------------


def check_csfr_sandwich(budget: Budget = FULL) -> CheckResult:
    ok = True
    lo = math.inf
    for alpha, p, m in itertools.product((0.1, 0.5, 0.9), (0.01, 0.1, 0.5), (1, 4)):
        ch = ChannelModel.nakagami(m, 1.0)
        v = analysis.csfr_bounds(alpha, p, analysis.s_cs(ch, SHANNON, alpha),
                                 analysis.s_csfr(ch, SHANNON, alpha, p), slack=1e-9)
        ok &= v.ok
        lo = min(lo, v.ratio - v.lower)
    return CheckResult(8, "CS-FR throughput sandwich", ok, f"min(ratio - lower bound) = {lo:.3e}")


# -- 9: fairness -------------------------------------------------------------------------


def check_fairness(budget: Budget = FULL) -> CheckResult:
    ok = True
    notes = []
    worst_z = 0.0
    min_qfi_margin = math.inf
    for k, a in enumerate(np.round(np.arange(0.1, 1.0, 0.1), 10)):
        rep = run(SimConfig(_two_users(float(a)), "cs", num_slots=budget.slots, master_seed=900 + k))
        fr = fairness_from_metrics(rep)
        z = np.abs(fr.i_d - i_d_cs(fr.alpha)) / fr.estimator_stderr
        worst_z = max(worst_z, float(z.max()))
        ok &= bool(np.all(z <= 3.0))
        margin = fr.qfi - (8.0 / 9.0 - 3.0 * fr.qfi_se)
        min_qfi_margin = min(min_qfi_margin, margin)
        ok &= margin >= 0
    notes.append(f"CS I_D max |z|={worst_z:.2f}; QFI margin over 8/9-3se={min_qfi_margin:.4f}")

    users = _two_users(0.7)
    reports = {}
    for j, pol in enumerate(("cs", "liu", "df", "rrs")):
        params = _offsets_for(users, pol, 9500 + j)
        rep = run(SimConfig(users, pol, params, num_slots=budget.slots, master_seed=950 + j))
        reports[pol] = (rep, fairness_from_metrics(rep))
    cs_lo = reports["cs"][1].band()[0]
    for pol in ("liu", "df"):
        hi = reports[pol][1].band()[1]
        ok &= cs_lo > hi
        notes.append(f"QFI cs {reports['cs'][1].qfi:.4f} vs {pol} {reports[pol][1].qfi:.4f}")
    rrs = reports["rrs"][0]
    z_rrs = np.abs(rrs.d_mean - 0.5) / rrs.d_se
    ok &= bool(np.all(z_rrs <= 3.0))
    rrs_i = reports["rrs"][1].i_d
    ok &= bool(np.all(np.abs(rrs_i - 0.5 / d_ub(np.array([0.7, 0.3]))) <= 3.0 * reports["rrs"][1].estimator_stderr))
    notes.append(f"RRS D={np.round(rrs.d_mean, 4).tolist()} max|z|={z_rrs.max():.2f}")
    return CheckResult(9, "qualitative fairness", ok, "; ".join(notes))


# -- 10: property suite ---------------------------------------------------------------

SLACK = 1e-8


def _le(a: float, b: float) -> bool:
    return a <= b + SLACK * max(abs(a), abs(b), 1e-12)


def _random_instance(rng: np.random.Generator):
    m = int(rng.integers(1, 7))
    mean = float(10.0 ** (rng.uniform(-10.0, 20.0) / 10.0))
    ch = ChannelModel.nakagami(m, mean)
    rate = SHANNON if rng.random() < 0.6 else RateFunction.capped(float(rng.uniform(0.5, 6.0)))
    x1, x2 = np.sort(rng.uniform(0.0, 0.95, 2))
    a1, a2 = np.sort(rng.uniform(0.02, 1.0, 2))
    return ch, rate, float(x1), float(x2), float(a1), float(a2)


def property_violations(ch, rate, x1, x2, a1, a2, s: Callable | None = None) -> list[int]:
    """Numbers of the S(x, alpha) monotonicity properties violated by this instance."""
    s = s or (lambda x, a: analysis.s_universal(ch, rate, x, a))
    bad = []
    x, a = x1, a1
    if not _le(a1 * s(x, a1), a2 * s(x, a2)):
        bad.append(1)
    if not _le(s(x**a2, a2), s(x**a1, a1)):
        bad.append(2)
    if not _le(s(x2, a), s(x1, a)):
        bad.append(3)
    if not _le(s(x1, a) / (1 - x1 ** (1 / a)), s(x2, a) / (1 - x2 ** (1 / a))):
        bad.append(4)
    sl = lambda xx, aa: s(0.0, aa) - s(xx, aa)  # noqa: E731
    if not _le(a1 * sl(x2, a1), a2 * sl(x2, a2)):
        bad.append(5)
    g = lambda xx: s(xx**a, a) + xx ** (1 - a) * sl(xx**a, 1.0)  # noqa: E731
    if not _le(g(x2), g(x1)):
        bad.append(6)
    return bad


def check_properties(budget: Budget = FULL) -> CheckResult:
    rng = np.random.default_rng(1010)
    fails = []
    for i in range(budget.instances):
        inst = _random_instance(rng)
        bad = property_violations(*inst)
        if bad:
            fails.append((i, bad))
    ok = not fails
    # CS throughput rises and its gain falls with alpha, on a grid
    grid = np.linspace(0.02, 1.0, 25)
    mono_ok = True
    for m, db in itertools.product((1, 2, 4), (0.0, 10.0)):
        ch = ChannelModel.nakagami(m, 10.0 ** (db / 10.0))
        e_r = analysis.mean_rate(ch, SHANNON)
        s_cs = np.array([analysis.s_cs(ch, SHANNON, a) for a in grid])
        g = s_cs / (grid * e_r)
        mono_ok &= bool(np.all(np.diff(s_cs) > 0) and np.all(np.diff(g) < 0) and np.all(g >= 1 - SLACK))
        s_lb = np.array([analysis.s_lb(ch, SHANNON, a) for a in grid])
        mono_ok &= bool(np.all(s_lb <= s_cs * (1 + SLACK)))
    # capped rate: CS approaches the upper bound as alpha -> 0
    ch = ChannelModel.rayleigh(1.0)
    capped = RateFunction.capped(2.0)
    ratios = [analysis.s_cs(ch, capped, a) / analysis.s_ub(ch, capped, a) for a in (0.1, 0.01, 0.001)]
    cap_ok = ratios[0] < ratios[1] < ratios[2] and ratios[2] > 0.99
    ok = ok and mono_ok and cap_ok
    detail = (f"{budget.instances - len(fails)}/{budget.instances} instances clean; "
              f"CS monotone & lower bound: {mono_ok}; capped ratios {[round(r, 5) for r in ratios]}")
    return CheckResult(10, "property suite", ok, detail, data={"fails": fails})


# -- 11: reproducibility ------------------------------------------------------------


def check_reproducibility(budget: Budget = FULL) -> CheckResult:
    slots = 80_000 if budget is FULL else 40_000
    texts = {}
    for name, changes in (
        ("fig4_id_per_user", {"slots": slots}),
        ("fig10_gain_vs_nfb", {"slots": slots, "params": {"alphas": [0.1, 0.5], "mc_p": [0.02, 0.5]},
                               "sweep": {"axis": "p", "values": [0.0, 0.02, 0.5]}}),
    ):
        spec = dataclasses.replace(load_spec(name), **changes)
        texts[name] = [run_experiment(spec, workers=w).csv_text() for w in (1, 8)]
    same = {k: v[0] == v[1] for k, v in texts.items()}
    ok = all(same.values())
    return CheckResult(11, "reproducibility 1 vs 8 threads", ok, f"identical CSV: {same}")


CHECKS: dict[int, Callable[[Budget], CheckResult]] = {
    1: check_feedback_numbers,
    2: check_feedback_ratios,
    3: check_closed_form,
    4: check_cs_law,
    5: check_csfr_law,
    6: check_car,
    7: check_ub_ratio,
    8: check_csfr_sandwich,
    9: check_fairness,
    10: check_properties,
    11: check_reproducibility,
}


def run_check(criterion: int, quick: bool = False) -> CheckResult:
    budget = QUICK if quick else FULL
    t0 = time.perf_counter()
    try:
        res = CHECKS[criterion](budget)
    except Exception as exc:  # a crash is a failed criterion, reported as such
        res = CheckResult(criterion, CHECKS[criterion].__name__, False, f"{type(exc).__name__}: {exc}")
    res.elapsed = time.perf_counter() - t0
    return res


def run_suite(quick: bool = False, only=None) -> list[CheckResult]:
    return [run_check(c, quick) for c in sorted(only or CHECKS)]

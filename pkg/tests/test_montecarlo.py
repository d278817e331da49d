import json
import math

import numpy as np
import pytest
from scipy import stats

from cdfsched.analysis import cs_selected_cdf, feedback_overhead, s_cs
from cdfsched.fading import ChannelModel, RateFunction
from cdfsched.montecarlo import (
    CalibrationMissing,
    SimConfig,
    ks_critical,
    ks_distance,
    replica_seeds,
    run,
    simulate_genie,
)
from cdfsched.sched import OffsetVector, SlotKind, UserSpec, calibrate_offsets


def mixed_users(weights):
    chans = [ChannelModel.rayleigh(1.0), ChannelModel.nakagami(4, 1.0), ChannelModel.rayleigh(2.0),
             ChannelModel.nakagami(2, 0.5)]
    return [UserSpec(i, w, chans[i % len(chans)]) for i, w in enumerate(weights)]


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig([], "cs")
    with pytest.raises(ValueError):
        SimConfig(mixed_users([1]), "pf")
    with pytest.raises(ValueError):
        SimConfig(mixed_users([1]), "cs", num_slots=0)
    with pytest.raises(ValueError):
        SimConfig(mixed_users([1]), "cs", warmup_slots=-1)


def test_cs_cars_match_weights():
    w = [1.0, 2.0, 3.0, 4.0]
    rep = run(SimConfig(mixed_users(w), "cs", num_slots=100_000, num_replicas=2, master_seed=5))
    alpha = np.array(w) / 10
    assert rep.num_slots == 200_000
    assert np.all(np.abs(rep.car - alpha) < 3.5 * rep.car_se)
    np.testing.assert_allclose(rep.target_car, alpha)
    assert rep.feedback_per_slot == 4.0 and rep.nfb_frequency == 0.0


def test_cs_throughput_matches_analysis():
    users = mixed_users([1.0, 3.0])
    rep = run(SimConfig(users, "cs", num_slots=200_000, master_seed=9))
    for i, usr in enumerate(users):
        expect = s_cs(usr.channel, usr.rate_fn, rep.target_car[i])
        assert abs(rep.throughput[i] - expect) < 4 * rep.throughput_se[i]


def test_csfr_feedback_and_nfb_frequency():
    users = mixed_users([1] * 10)
    p = 0.02
    rep = run(SimConfig(users, "csfr", {"p": p}, num_slots=200_000, master_seed=1))
    assert abs(rep.nfb_frequency - p) < 3.5 * rep.nfb_se
    assert abs(rep.feedback_per_slot - feedback_overhead([1] * 10, p)[0]) < 4 * rep.feedback_se
    assert np.all(np.abs(rep.car - 0.1) < 3.5 * rep.car_se)


def test_csfr_nfb_selections_follow_weights():
    users = mixed_users([1.0, 3.0])
    rep = run(SimConfig(users, "csfr", {"p": 0.3}, num_slots=200_000, master_seed=2))
    frac = rep.nfb_selections / rep.nfb_selections.sum()
    se = math.sqrt(0.25 * 0.75 / rep.nfb_selections.sum())
    assert abs(frac[0] - 0.25) < 4 * se
    alpha = rep.target_car
    np.testing.assert_allclose(rep.feedback_by_user, 1 - 0.3**alpha, atol=0.005)


def test_rrs_has_no_feedback_and_exact_shares():
    rep = run(SimConfig(mixed_users([1.0, 1.0]), "rrs", num_slots=10_000))
    assert rep.selections.tolist() == [5000, 5000]
    assert rep.feedback_per_slot == 0.0


def test_offset_policies_require_calibration():
    users = mixed_users([1.0, 1.0])
    with pytest.raises(CalibrationMissing):
        run(SimConfig(users, "liu", num_slots=100))
    wrong = OffsetVector((0.0, 0.0), "liu")
    with pytest.raises(CalibrationMissing):
        run(SimConfig(users, "df", {"offsets": wrong}, num_slots=100))


def test_calibrated_liu_hits_targets():
    users = [UserSpec(0, 1.0, ChannelModel.rayleigh()), UserSpec(1, 3.0, ChannelModel.nakagami(4))]
    off = calibrate_offsets(users, [0.25, 0.75], "liu", seed=4)
    rep = run(SimConfig(users, "liu", {"offsets": off}, num_slots=200_000, master_seed=3))
    np.testing.assert_allclose(rep.car, [0.25, 0.75], atol=0.006)


def test_workers_do_not_change_results():
    users = mixed_users([1.0, 2.0, 0.5])
    cfg = dict(users=users, policy="csfr", params={"p": 0.1}, num_slots=30_000, num_replicas=8,
               master_seed=77, reservoir_size=500)
    a = run(SimConfig(**cfg, workers=1))
    b = run(SimConfig(**cfg, workers=8))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    for x, y in zip(a.selected_snr, b.selected_snr):
        np.testing.assert_array_equal(x, y)
    assert a.car_replica_se is not None


def test_replica_seeds_distinct_and_reproducible():
    a = [s.generate_state(2).tolist() for s in replica_seeds(3, 4)]
    b = [s.generate_state(2).tolist() for s in replica_seeds(3, 4)]
    assert a == b and len({tuple(x) for x in a}) == 4


def test_trace_sink_callable_and_jsonl(tmp_path):
    users = mixed_users([1.0, 1.0, 1.0])
    cfg = SimConfig(users, "csfr", {"p": 0.2}, num_slots=2_000, master_seed=8, warmup_slots=100)
    seen = []
    rep = run(cfg, trace_sink=seen.append)
    assert len(seen) == 2_000 and seen[0].slot_index == 0
    assert np.bincount([t.selected_user for t in seen], minlength=3).tolist() == rep.selections.tolist()
    nfb = [t for t in seen if t.slot_kind is SlotKind.NFB]
    assert len(nfb) == round(rep.nfb_frequency * 2_000)
    assert all(not any(t.fed_back) for t in nfb)
    path = tmp_path / "trace.jsonl"
    run(cfg, trace_sink=path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2_000
    assert json.loads(lines[5]) == seen[5].to_dict()


def test_warmup_slots_are_discarded():
    users = mixed_users([1.0, 1.0])
    rep = run(SimConfig(users, "rrs", num_slots=1_001, warmup_slots=1))
    # warmup consumed the first round robin turn
    assert rep.selections.tolist() == [500, 501]


def test_reservoir_sample_follows_selected_law():
    users = mixed_users([1.0, 3.0])
    rep = run(SimConfig(users, "cs", num_slots=200_000, master_seed=6, reservoir_size=5_000))
    for i, usr in enumerate(users):
        s = rep.selected_snr[i]
        assert s.size == 5_000 and np.all(np.diff(s) >= 0)
        d = ks_distance(s, lambda x: cs_selected_cdf(usr.channel, rep.target_car[i], x))
        assert d < ks_critical(s.size)


def test_ks_distance_matches_scipy(rng):
    x = rng.exponential(size=3000)
    ref = stats.kstest(x, stats.expon.cdf)
    assert ks_distance(x, stats.expon.cdf) == pytest.approx(ref.statistic, rel=1e-12)
    assert ks_critical(10_000) == pytest.approx(0.0163)
    assert ks_critical(100, 0.02) == pytest.approx(math.sqrt(-0.5 * math.log(0.01)) / 10)
    with pytest.raises(ValueError):
        ks_distance([], stats.expon.cdf)


def test_ks_detects_wrong_law(rng):
    x = rng.exponential(scale=1.1, size=20_000)
    assert ks_distance(x, stats.expon.cdf) > ks_critical(x.size)


def test_genie_serves_fraction_alpha():
    user = UserSpec(0, 1.0, ChannelModel.rayleigh(), RateFunction.shannon())
    g = simulate_genie(user, 0.3, 200_000, seed=1)
    assert abs(g.serve_frequency - 0.3) < 4 * g.serve_se
    assert abs(g.d_mean - 0.85) < 4 * g.d_se
    with pytest.raises(ValueError):
        simulate_genie(user, 0.0, 10)

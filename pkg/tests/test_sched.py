import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdfsched.fading import ChannelModel, RateFunction
from cdfsched.sched import (
    CalibrationError,
    CalibrationSchedule,
    CSFRPolicy,
    CSPolicy,
    DFPolicy,
    LiuPolicy,
    OffsetVector,
    SlotKind,
    UserSpec,
    WeightedRoundRobin,
    access_ratios,
    calibrate_offsets,
    cs_select,
    csfr_step,
    csfr_threshold,
    df_select,
    liu_select,
    optimal_threshold_select,
    rrs_select,
)


def users_with(weights, channel=None):
    ch = channel or ChannelModel.rayleigh(1.0)
    return [UserSpec(i, w, ch) for i, w in enumerate(weights)]


def test_user_spec_validation():
    with pytest.raises(ValueError):
        UserSpec(0, 0.0, ChannelModel.rayleigh())
    np.testing.assert_allclose(access_ratios(users_with([1, 3])), [0.25, 0.75])


def test_cs_select_examples():
    assert cs_select(users_with([1, 1, 1]), [0.2, 0.9, 0.5]) == 1
    # 0.5^(1/2) = 0.7071 > 0.6
    assert cs_select(users_with([2, 1]), [0.5, 0.6]) == 0
    with pytest.raises(ValueError):
        cs_select([], [])
    with pytest.raises(ValueError):
        cs_select(users_with([1, 1]), [0.5, 1.2])


@given(
    st.lists(st.tuples(st.floats(0.05, 20.0), st.floats(1e-6, 1.0)), min_size=1, max_size=12),
    st.floats(0.01, 100.0),
)
def test_cs_select_weight_scaling_invariance(pairs, c):
    w = [p[0] for p in pairs]
    u = [p[1] for p in pairs]
    a = cs_select(users_with(w), u, np.random.default_rng(0))
    b = cs_select(users_with([c * x for x in w]), u, np.random.default_rng(0))
    assert a == b


def test_batch_cs_scaling_invariance(rng):
    u = rng.random((5000, 4))
    w = np.array([1.0, 2.0, 0.5, 3.0])
    a = CSPolicy(w).decide(None, u, np.random.default_rng(1), None).selected
    b = CSPolicy(7.5 * w).decide(None, u, np.random.default_rng(1), None).selected
    np.testing.assert_array_equal(a, b)


def test_ties_broken_uniformly():
    rng = np.random.default_rng(3)
    users = users_with([1, 1, 1])
    picks = [cs_select(users, [0.7, 0.7, 0.2], rng) for _ in range(4000)]
    counts = np.bincount(picks, minlength=3)
    assert counts[2] == 0
    assert abs(counts[0] - 2000) < 4 * math.sqrt(1000)


def test_csfr_threshold_examples():
    assert csfr_threshold([1, 1, 1], 0.027) == pytest.approx(0.3, rel=1e-12)
    assert csfr_threshold([1, 2], 0.125) == pytest.approx(0.5, rel=1e-12)
    for p in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            csfr_threshold([1, 1], p)


@given(st.floats(1.0, 100.0), st.floats(1e-4, 0.999))
def test_csfr_threshold_round_trip(total, p):
    eta = csfr_threshold([total / 2, total / 2], p)
    assert eta**total == pytest.approx(p, rel=1e-12, abs=1e-12)


def test_csfr_step_feedback_and_nfb():
    users = users_with([1, 1, 1])
    fed, kind, sel = csfr_step(users, [0.95, 0.1, 0.99], 0.9)
    assert fed == (True, False, True) and kind is SlotKind.FB and sel == 2
    rr = WeightedRoundRobin([1, 1, 1])
    fed, kind, sel = csfr_step(users, [0.1, 0.2, 0.3], 0.9, rr_state=rr)
    assert not any(fed) and kind is SlotKind.NFB and sel == 0
    with pytest.raises(ValueError):
        csfr_step(users, [0.1, 0.2, 0.3], 1.0)


def test_weighted_round_robin():
    rr = WeightedRoundRobin([1, 1])
    assert [rr.next() for _ in range(4)] == [0, 1, 0, 1]
    rr = WeightedRoundRobin([2, 1])
    assert np.bincount(rr.take(3000)).tolist() == [2000, 1000]
    single = WeightedRoundRobin([3.0])
    assert set(single.take(10).tolist()) == {0}
    rr = WeightedRoundRobin([3, 1, 2])
    seq = rr.take(600)
    for start in range(0, 594):
        assert np.bincount(seq[start:start + 6], minlength=3).tolist() == [3, 1, 2]
    assert rrs_select(users_with([1, 1]), WeightedRoundRobin([1, 1])) == 0


def test_weighted_round_robin_real_weights():
    rr = WeightedRoundRobin([0.3, 0.7])
    counts = np.bincount(rr.take(10_000))
    assert counts.tolist() == [3000, 7000]


def test_liu_and_df_select():
    users = users_with([1, 1])
    assert liu_select(users, [3.0, 1.0], [0.0, 0.0]) == 0
    assert liu_select(users, [3.0, 1.0], OffsetVector((0.0, 5.0), "liu")) == 1
    assert df_select(users, [0.4, 0.6], [0.0, 0.0]) == 1
    assert df_select(users, [0.4, 0.6], [0.3, 0.0]) == 0
    with pytest.raises(ValueError):
        liu_select(users, [1.0, 2.0], [0.0])


def test_df_with_equal_offsets_matches_cs(rng):
    u = rng.random((2000, 3))
    cs = CSPolicy([1, 1, 1]).decide(None, u, rng, None).selected
    df = DFPolicy([0.2, 0.2, 0.2]).decide(None, u, rng, None).selected
    np.testing.assert_array_equal(cs, df)


def test_optimal_threshold_select():
    user = UserSpec(0, 1.0, ChannelModel.rayleigh(1.0))
    assert optimal_threshold_select(user, 1.0, 0.0)
    assert optimal_threshold_select(user, 0.5, math.log(2.0) + 1e-9)
    assert not optimal_threshold_select(user, 0.5, math.log(2.0) - 1e-6)
    with pytest.raises(ValueError):
        optimal_threshold_select(user, 0.0, 1.0)


def test_csfr_policy_batch(rng):
    pol = CSFRPolicy([1, 1, 1, 1], 0.1)
    u = rng.random((200_000, 4))
    dec = pol.decide(None, u, rng, pol.new_state())
    assert abs(dec.nfb.mean() - 0.1) < 4 * math.sqrt(0.09 / 200_000)
    # in feedback slots the selected user is the best reporter
    fb = ~dec.nfb
    np.testing.assert_array_equal(dec.selected[fb], np.argmax(u[fb], axis=1))
    assert dec.fed_back[fb].any(axis=1).all()
    assert not dec.fed_back[dec.nfb].any()
    with pytest.raises(ValueError):
        CSFRPolicy([1, 1], 0.1, nfb_mode="fifo")


def test_liu_policy_scores_use_own_rate():
    pol = LiuPolicy([RateFunction.shannon(), RateFunction.capped(0.5)], [0.0, 0.0])
    snr = np.array([[1.0, 100.0]])
    assert pol.decide(snr, None, None, None).selected.tolist() == [0]


# calibration


SCENARIO = [UserSpec(0, 1.0, ChannelModel.rayleigh(1.0)), UserSpec(1, 1.0, ChannelModel.nakagami(4, 1.0))]


@pytest.mark.parametrize("policy", ["liu", "df"])
def test_calibration_reaches_asymmetric_targets(policy):
    off = calibrate_offsets(SCENARIO, [0.3, 0.7], policy, seed=11)
    assert off.converged and off.residual < 0.005
    assert off.offsets[0] == 0.0 and off.policy == policy
    assert off.to_dict()["iterations"] == off.iterations


def test_calibration_symmetric_users_give_near_zero_offsets():
    users = users_with([1, 1])
    off = calibrate_offsets(users, [0.5, 0.5], "df", seed=2)
    assert off.residual < 0.005
    assert abs(off.offsets[1]) < 0.02


def test_calibration_single_user():
    off = calibrate_offsets(users_with([1]), [1.0], "liu")
    assert off.offsets == (0.0,) and off.converged


@pytest.mark.parametrize("targets", [[0.5, 0.6], [1.0, 0.0], [0.5]])
def test_calibration_precondition_errors(targets):
    with pytest.raises(ValueError):
        calibrate_offsets(SCENARIO, targets, "liu")


def test_calibration_unknown_policy():
    with pytest.raises(ValueError):
        calibrate_offsets(SCENARIO, [0.5, 0.5], "cs")


def test_calibration_failure_is_reported():
    tiny = CalibrationSchedule(batch_slots=1000, check_every=2, check_slots=2000, tol=1e-6, max_slots=10_000)
    with pytest.raises(CalibrationError) as info:
        calibrate_offsets(SCENARIO, [0.3, 0.7], "liu", tiny)
    assert not info.value.offsets.converged
    off = calibrate_offsets(SCENARIO, [0.3, 0.7], "liu", tiny, raise_on_failure=False)
    assert not off.converged and off.residual > 1e-6

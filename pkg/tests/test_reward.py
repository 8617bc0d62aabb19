import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentdrive.reward import (
    RewardConfig,
    deviation_penalty,
    speed_reward,
    steering_cost,
    total_reward,
    travel_reward,
)
from latentdrive.sim.actors import Crosser
from latentdrive.sim.vehicle import Pose
from latentdrive.sim.world import RewardTerms, create_world

from conftest import straight_route

CFG = RewardConfig()


def world_at_speed(speed):
    world = create_world(straight_route(200.0), [], seed=0)
    world.ego = Pose(0.0, 0.0, 0.0, speed)
    return world


def test_perfect_tracking_without_hazards():
    assert speed_reward(world_at_speed(CFG.v_target), CFG) == 1.0


def test_standing_still_without_hazards():
    assert speed_reward(world_at_speed(0.0), CFG) == 0.0


def test_pedestrian_at_half_safe_distance_halves_target():
    world = world_at_speed(CFG.v_target)
    safe = CFG.safe_distance["pedestrian"]
    # free gap between the discs equals half the safe distance
    x = world.config.ego_radius + 0.4 + 0.5 * safe
    sc = Crosser(world.layout.extended, x + world.layout_offset, 0.0, 0.0, 0.0)
    world.add_actor("pedestrian", sc.pose(moving=False), None)
    assert speed_reward(world, CFG) == pytest.approx(0.5)


def test_hazard_behind_is_ignored():
    world = world_at_speed(CFG.v_target)
    world.ego = Pose(20.0, 0.0, 0.0, CFG.v_target)
    sc = Crosser(world.layout.extended, 15.0 + world.layout_offset, 0.0, 0.0, 0.0)
    world.add_actor("pedestrian", sc.pose(moving=False), None)
    assert speed_reward(world, CFG) == 1.0


@given(st.floats(0, 40))
def test_speed_reward_is_clamped(speed):
    assert -1.0 <= speed_reward(world_at_speed(speed), CFG) <= 1.0


@pytest.mark.parametrize("delta,expected", [(0.5, 0.5), (0.0, 0.0), (-0.3, 0.0)])
def test_travel_reward(delta, expected):
    assert travel_reward(delta) == expected


@pytest.mark.parametrize("offset,expected", [(0.0, 0.0), (2.0, -1.0), (0.5, -0.25), (-0.5, -0.25), (9.0, -1.0)])
def test_deviation_penalty(offset, expected):
    assert deviation_penalty(offset, 2.0) == expected


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_deviation_penalty_monotone_and_bounded(a, b):
    pa, pb = deviation_penalty(a, 2.0), deviation_penalty(b, 2.0)
    assert -1.0 <= pa <= 0.0
    if abs(a) <= abs(b):
        assert pa >= pb


def test_steering_cost_examples():
    assert steering_cost(0.3, 0.3) == 0.0
    assert steering_cost(-0.5, 0.5) == -1.0
    steers = [0.2] * 10
    assert sum(steering_cost(a, b) for a, b in zip(steers[1:], steers[:-1])) == 0.0


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_steering_cost_zero_iff_equal(a, b):
    c = steering_cost(a, b)
    assert -2.0 <= c <= 0.0
    assert (c == 0.0) == (a == b)


def test_total_reward_examples():
    assert total_reward(RewardTerms(), CFG) == 0.0
    assert total_reward(RewardTerms(1.0, 0.5, 0.0, 0.0), RewardConfig(alpha_travel=1.0)) == 1.5


@given(
    st.floats(-1, 1), st.floats(0, 3), st.floats(-1, 0), st.floats(-2, 0),
    st.floats(0, 5), st.floats(0, 5), st.floats(0, 5),
)  # fmt: skip
def test_total_reward_matches_formula_and_is_linear(rs, rt, pd, cs, a_tr, a_de, a_st):
    cfg = RewardConfig(alpha_travel=a_tr, alpha_deviation=a_de, alpha_steer=a_st)
    terms = RewardTerms(rs, rt, pd, cs)
    expect = math.fsum([rs, a_tr * rt, a_de * pd, a_st * cs])
    assert total_reward(terms, cfg) == pytest.approx(expect, abs=1e-12)
    # finite difference in each coefficient recovers the matching term
    h = 0.25
    for name, term in (("alpha_travel", rt), ("alpha_deviation", pd), ("alpha_steer", cs)):
        bumped = RewardConfig(**{**dict(alpha_travel=a_tr, alpha_deviation=a_de, alpha_steer=a_st), name: getattr(cfg, name) + h})
        assert (total_reward(terms, bumped) - total_reward(terms, cfg)) / h == pytest.approx(term, abs=1e-9)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        RewardConfig(alpha_travel=-1.0)
    with pytest.raises(ValueError):
        RewardConfig(d_max=0.0)

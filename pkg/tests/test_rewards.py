import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlight.encoding import BLOCK_LAYOUT, encode_state, state_shape
from gridlight.grid import build_grid
from gridlight.rewards import beta_schedule, hybrid_reward, local_reward, local_rewards
from gridlight.sim import GridSim, SensorFrame, ZONE_CAPACITY


def frame_for(n_tls, halting=None, speeds=None, counts=None, limit=13.89):
    h = np.zeros((n_tls, 4, 2), dtype=np.int64) if halting is None else halting
    s = np.full((n_tls, 4, 2), limit) if speeds is None else speeds
    c = h.copy() if counts is None else counts
    return SensorFrame(h, s, c, limit)


def test_local_reward_directional_imbalance():
    h = np.zeros((1, 4, 2), dtype=np.int64)
    h[0, 1, 0] = 4  # E through
    h[0, 3, 0] = 2  # W through
    h[0, 0, 0] = 1  # N through
    h[0, 2, 1] = 1  # S left
    frame = frame_for(1, halting=h)
    assert local_reward(frame, 0) == -3.0


def test_local_reward_balanced_and_empty():
    h = np.zeros((2, 4, 2), dtype=np.int64)
    h[0, 1, 0] = 3
    h[0, 0, 1] = 3
    frame = frame_for(2, halting=h)
    assert local_reward(frame, 0) == 0.0
    assert local_reward(frame, 1) == 0.0
    assert local_reward(frame, 0) <= 0.0


def test_local_rewards_vector_matches_scalar():
    rng = np.random.default_rng(0)
    h = rng.integers(0, 10, size=(9, 4, 2))
    frame = frame_for(9, halting=h)
    vec = local_rewards(frame)
    for i in range(9):
        assert vec[i] == local_reward(frame, i)
        assert vec[i] <= 0.0


def test_hybrid_endpoints_and_example():
    locals_ = np.array([-3.0, 0, 0, 0, 0, 0, 0, 0, -3.0])
    assert hybrid_reward(2.0, locals_, 1.0) == 2.0
    assert hybrid_reward(2.0, locals_, 0.0) == pytest.approx(np.mean(locals_))
    assert hybrid_reward(2.0, locals_, 0.5) == pytest.approx(0.5 * 2.0 + 0.5 * (-6.0 / 9.0))


def test_hybrid_rejects_bad_beta():
    with pytest.raises(ValueError):
        hybrid_reward(1.0, np.zeros(3), 1.5)


@settings(max_examples=200, deadline=None)
@given(
    g=st.floats(-100, 100),
    beta=st.floats(0, 1),
    locals_=st.lists(st.floats(-50, 0), min_size=1, max_size=16),
)
def test_hybrid_identity_property(g, beta, locals_):
    arr = np.array(locals_)
    expected = beta * g + (1 - beta) * arr.mean()
    assert abs(hybrid_reward(g, arr, beta) - expected) <= 1e-12


def test_beta_schedule():
    assert beta_schedule(0.0) == 0.0
    assert beta_schedule(1.0) == 1.0
    assert beta_schedule(0.5) == 0.5
    assert beta_schedule(-0.3) == 0.0
    assert beta_schedule(1.7) == 1.0
    grid = np.linspace(0, 1, 50)
    vals = [beta_schedule(x) for x in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_encode_shape_3x3():
    net = build_grid(3, 3, 500)
    frame = GridSim(net).read_sensors()
    assert encode_state(frame, net).shape == (2, 12, 12)
    assert state_shape(net) == (2, 12, 12)


def test_encode_empty_network():
    net = build_grid(3, 3, 500)
    state = encode_state(GridSim(net).read_sensors(), net)
    assert np.all(state[0] == 0.0)
    # speed channel: 1.0 at each of the 8 sensor cells per block, 0 elsewhere
    assert np.count_nonzero(state[1]) == 9 * 8
    assert set(np.unique(state[1])) == {0.0, 1.0}


def test_encode_halting_normalization():
    net = build_grid(2, 2, 500)
    sim = GridSim(net)
    frame = sim.read_sensors()
    frame.halting[3, 1, 0] = 10  # tls (1,1), E through
    state = encode_state(frame, net)
    br, bc = BLOCK_LAYOUT[(1, 0)]
    assert state[0, 4 * 1 + br, 4 * 1 + bc] == pytest.approx(10 / ZONE_CAPACITY)


def test_block_layout_is_a_bijection():
    assert len(set(BLOCK_LAYOUT.values())) == 8


def test_encode_is_injective_on_sensor_values():
    net = build_grid(2, 2, 500)
    sim = GridSim(net)
    base = sim.read_sensors()
    state_a = encode_state(base, net)
    for tls in range(4):
        for di in range(4):
            for mi in range(2):
                frame = SensorFrame(base.halting.copy(), base.mean_speed.copy(),
                                    base.vehicle_count.copy(), base.speed_limit)
                frame.halting[tls, di, mi] += 1
                assert not np.array_equal(encode_state(frame, net), state_a)

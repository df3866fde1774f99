import numpy as np
import pytest

from gridlight.demand import (
    DemandConfig, build_routing_table, period_at, ring_density,
    routing_table_csv_rows, sample_arrivals, spawn,
)
from gridlight.grid import build_grid
from gridlight.sim import GridSim


def test_config_validation():
    with pytest.raises(ValueError):
        DemandConfig(b=0, p=1.0)
    with pytest.raises(ValueError):
        DemandConfig(b=10, p=0.0)
    with pytest.raises(ValueError):
        DemandConfig(b=10, p=1.0, episode_length=3601, periods=4)


def test_binomial_mean_matches_rate():
    # b=10, p=2: mean 0.5 veh/s, which is 1800 veh/h
    rng = np.random.default_rng(0)
    cfg = DemandConfig(b=10, p=2.0)
    draws = [sample_arrivals(rng, cfg) for _ in range(200_000)]
    assert abs(np.mean(draws) - 0.5) < 0.01
    assert max(draws) <= 10


def test_huge_p_gives_zero():
    rng = np.random.default_rng(1)
    cfg = DemandConfig(b=10, p=1e12)
    assert all(sample_arrivals(rng, cfg) == 0 for _ in range(100))


def test_monte_carlo_against_binomial_mean():
    # b=60, p=0.1: per-second mean is 10; sample mean within 1%
    rng = np.random.default_rng(2)
    cfg = DemandConfig(b=60, p=0.1)
    draws = np.array([sample_arrivals(rng, cfg) for _ in range(400_000)])
    assert abs(draws.mean() - 10.0) / 10.0 < 0.01


def test_probability_clamped_when_bp_below_one():
    rng = np.random.default_rng(3)
    cfg = DemandConfig(b=2, p=0.25)  # 1/(b p) = 2 > 1: clamp to certainty
    assert all(sample_arrivals(rng, cfg) == 2 for _ in range(50))


def test_episode_rate_within_three_sigma():
    rng = np.random.default_rng(4)
    cfg = DemandConfig(b=30, p=0.5, episode_length=3600)
    total = sum(sample_arrivals(rng, cfg) for _ in range(cfg.episode_length))
    q = 1.0 / (cfg.b * cfg.p)
    sigma = np.sqrt(cfg.episode_length * cfg.b * q * (1 - q))
    assert abs(total - cfg.episode_length * cfg.rate) <= 3 * sigma


def test_ring_density_flat_limit():
    w = ring_density(12, center=3.0, width=1e9)
    np.testing.assert_allclose(w, np.full(12, 1 / 12), atol=1e-9)


def test_ring_density_wraps():
    w = ring_density(10, center=0.0, width=2.0)
    assert w[1] == pytest.approx(w[9])  # distance 1 on both sides of the ring
    assert w[0] == max(w)


def test_routing_table_rows_are_distributions():
    net = build_grid(3, 3, 500)
    table = build_routing_table(np.random.default_rng(5), net, periods=4)
    assert table.entry_weights.shape == (4, 12)
    assert table.exit_weights.shape == (4, 12)
    for mat in (table.entry_weights, table.exit_weights):
        assert np.all(mat >= 0)
        np.testing.assert_allclose(mat.sum(axis=1), np.ones(4), atol=1e-9)


def test_routing_table_deterministic_per_seed():
    net = build_grid(2, 2, 500)
    a = build_routing_table(np.random.default_rng(9), net, 4)
    b = build_routing_table(np.random.default_rng(9), net, 4)
    np.testing.assert_array_equal(a.entry_weights, b.entry_weights)
    np.testing.assert_array_equal(a.exit_weights, b.exit_weights)


def test_period_selection():
    cfg = DemandConfig(b=10, p=1.0, episode_length=3600, periods=4)
    assert period_at(0, cfg) == 0
    assert period_at(899, cfg) == 0
    assert period_at(900, cfg) == 1
    assert period_at(2700, cfg) == 3  # the 45:00-60:00 row
    assert period_at(3599, cfg) == 3


def test_spawn_zero_count():
    net = build_grid(1, 1, 500)
    sim = GridSim(net)
    cfg = DemandConfig(b=10, p=1.0, episode_length=100, periods=4)
    table = build_routing_table(np.random.default_rng(0), net, 4)
    assert spawn(np.random.default_rng(0), sim, 0, table, 0, cfg) == []


def test_one_hot_routing_gives_single_route():
    net = build_grid(2, 2, 500)
    sim = GridSim(net)
    cfg = DemandConfig(b=10, p=1.0, episode_length=100, periods=4)
    table = build_routing_table(np.random.default_rng(0), net, 4)
    table.entry_weights[:] = 0.0
    table.entry_weights[:, 0] = 1.0
    table.exit_weights[:] = 0.0
    table.exit_weights[:, 4] = 1.0
    vehicles = spawn(np.random.default_rng(1), sim, 20, table, 0, cfg)
    routes = {v.route for v in vehicles}
    assert len(routes) == 1


def test_same_arm_exit_is_resampled():
    net = build_grid(1, 1, 500)
    sim = GridSim(net)
    cfg = DemandConfig(b=10, p=1.0, episode_length=100, periods=4)
    table = build_routing_table(np.random.default_rng(0), net, 4)
    table.entry_weights[:] = 0.0
    table.entry_weights[:, 0] = 1.0  # everyone enters at the N arm
    vehicles = spawn(np.random.default_rng(2), sim, 50, table, 0, cfg)
    n_exit = net.exit_edges[0]
    for veh in vehicles:
        assert veh.route[-1] != n_exit  # never a U-turn back out the N arm


def test_csv_rows_cover_each_period_and_edge():
    net = build_grid(2, 2, 500)
    table = build_routing_table(np.random.default_rng(7), net, 4)
    rows = routing_table_csv_rows(net, table)
    assert rows[0] == ["period", "kind", "edge", "percent"]
    assert len(rows) == 1 + 4 * (8 + 8)

"""Random traffic demand: Binomial arrivals and periodic directional routing.

Arrivals per second follow Binomial(b, 1/(b*p)) so the mean is 1/p vehicles
per second; b caps the simultaneous arrivals and controls burstiness.  Each
episode splits into equal periods, and each period draws fresh entry and
exit weight vectors: a normal density over the boundary ring (wrapping at
the ends) gives directional demand like rush-hour flows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import RoadNetwork
from .sim import GridSim, Vehicle


@dataclass
class DemandConfig:
    b: int                     # max simultaneous arrivals
    p: float                   # 1/p = expected arrivals per second
    seed: int = 0
    episode_length: int = 3600
    periods: int = 4

    def __post_init__(self):
        if self.b < 1:
            raise ValueError(f"b must be >= 1, got {self.b}")
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.episode_length % self.periods:
            raise ValueError(
                f"episode_length {self.episode_length} not divisible by {self.periods} periods")

    @property
    def rate(self) -> float:
        return 1.0 / self.p


@dataclass
class RoutingTable:
    entry_weights: np.ndarray  # (periods, n_entries), rows sum to 1
    exit_weights: np.ndarray   # (periods, n_exits), rows sum to 1

    @property
    def periods(self) -> int:
        return self.entry_weights.shape[0]


def sample_arrivals(rng: np.random.Generator, config: DemandConfig) -> int:
    """Number of vehicles wanting to enter this second."""
    q = 1.0 / (config.b * config.p)
    return int(rng.binomial(config.b, min(q, 1.0)))


MIN_RING_WIDTH = 1.0


def ring_density(n: int, center: float, width: float) -> np.ndarray:
    """Normal density over ring indices 0..n-1, wrapped, normalized.

    Width is floored at MIN_RING_WIDTH so a degenerate draw cannot collapse
    onto a single edge.
    """
    width = max(width, MIN_RING_WIDTH)
    idx = np.arange(n)
    dist = np.abs(idx - center)
    dist = np.minimum(dist, n - dist)  # wrap around the boundary ring
    weights = np.exp(-0.5 * (dist / width) ** 2)
    return weights / weights.sum()


def _draw_ring_density(rng: np.random.Generator, n: int) -> np.ndarray:
    center = float(rng.integers(n))
    width = float(rng.uniform(MIN_RING_WIDTH, max(n / 2.0, MIN_RING_WIDTH + 1e-9)))
    return ring_density(n, center, width)


def build_routing_table(rng: np.random.Generator, network: RoadNetwork,
                        periods: int = 4) -> RoutingTable:
    if periods < 1:
        raise ValueError(f"periods must be >= 1, got {periods}")
    n_in = len(network.entry_edges)
    n_out = len(network.exit_edges)
    entry = np.stack([_draw_ring_density(rng, n_in) for _ in range(periods)])
    exit_ = np.stack([_draw_ring_density(rng, n_out) for _ in range(periods)])
    return RoutingTable(entry, exit_)


def _same_arm(network: RoadNetwork, entry_idx: int, exit_idx: int) -> bool:
    e = network.edges[entry_idx]
    x = network.edges[exit_idx]
    return e.to_node == x.from_node and e.to_dir == x.from_dir


def period_at(t: int, config: DemandConfig) -> int:
    period_len = config.episode_length // config.periods
    return min(t // period_len, config.periods - 1)


def spawn(rng: np.random.Generator, sim: GridSim, count: int, table: RoutingTable,
          t: int, config: DemandConfig) -> list[Vehicle]:
    """Create ``count`` vehicles for second ``t`` and queue them on the sim.

    Entry and exit edges are drawn independently from the active period's
    weights; an exit on the entry's own arm is redrawn (no U-turns).
    """
    if count == 0:
        return []
    net = sim.net
    period = period_at(t, config)
    entry_w = table.entry_weights[period]
    exit_w = table.exit_weights[period]
    vehicles = []
    n_exits = len(net.exit_edges)
    for _ in range(count):
        entry_i = int(rng.choice(len(entry_w), p=entry_w))
        entry = net.entry_edges[entry_i]
        exit_ = net.exit_edges[int(rng.choice(n_exits, p=exit_w))]
        redraws = 0
        while _same_arm(net, entry, exit_):
            redraws += 1
            if redraws > 100:  # degenerate one-hot table: walk the ring instead
                exit_ = net.exit_edges[(entry_i + 1) % n_exits]
                break
            exit_ = net.exit_edges[int(rng.choice(n_exits, p=exit_w))]
        vehicles.append(sim.add_vehicle(net.route(entry, exit_)))
    return vehicles


def routing_table_csv_rows(network: RoadNetwork, table: RoutingTable) -> list[list]:
    """Period-by-edge percentage rows for the routing heat table export."""
    rows = [["period", "kind", "edge", "percent"]]
    for period in range(table.periods):
        for j, edge_idx in enumerate(network.entry_edges):
            rows.append([period, "entry", network.edges[edge_idx].name,
                         round(100.0 * table.entry_weights[period, j], 4)])
        for j, edge_idx in enumerate(network.exit_edges):
            rows.append([period, "exit", network.edges[edge_idx].name,
                         round(100.0 * table.exit_weights[period, j], 4)])
    return rows

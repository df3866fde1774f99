"""Classical signal controllers for the comparison protocol.

``webster_plan`` sizes a fixed-time plan per intersection from expected
per-movement flows: critical flow ratios per phase, Webster's cycle formula
C = (1.5 L + 5) / (1 - Y) with L = 12 s of lost time (four 3 s yellows),
proportional green splits with a 5 s floor, and offsets that shift plans
along the dominant through direction by free-flow link travel time.

``ActuatedController`` runs gap-out logic per intersection: hold at least
the minimum green, extend while vehicles keep arriving on the served
movements, switch once the detector has been quiet for the gap time, and
always switch at the 45 s maximum.

Both controllers mirror the simulator's signal state machine and only emit
switch commands the simulator will honor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import NetParams, forward, sample_actions
from .grid import DIRS, PHASE_MOVES, RoadNetwork
from .sim import MAINTAIN, MIN_GREEN, SATURATION_FLOW, SWITCH, YELLOW_TIME, LightState, SensorFrame

LOST_TIME = 4 * YELLOW_TIME     # s per cycle spent in yellows
MIN_CYCLE = 20.0
MAX_CYCLE = 120.0
MAX_FLOW_RATIO = 0.95           # oversaturation guard for Webster's formula
MAX_GREEN = 45                  # s, actuated upper bound
GAP_TIME = 3                    # s without detection before gap-out

_DIR_INDEX = {d: i for i, d in enumerate(DIRS)}


@dataclass
class FixedPlan:
    """Per-tls cycle plan: four integer greens plus an offset, all seconds."""

    greens: list[tuple[int, int, int, int]]
    offsets: list[int]

    def cycle(self, tls: int) -> int:
        return sum(self.greens[tls]) + LOST_TIME


def webster_cycle(lost_time: float, y_total: float) -> float:
    return (1.5 * lost_time + 5.0) / (1.0 - y_total)


def movement_flows(network: RoadNetwork, table, rate: float) -> np.ndarray:
    """Expected per-lane flows (veh/s), indexed [tls, arrival dir, lane].

    Walks every (entry, exit) pair's shortest route, weighting by the
    routing table's entry/exit probabilities with same-arm exits excluded
    (the spawner redraws those), averaged over periods.
    """
    flows = np.zeros((network.n_tls, 4, 2))
    n_in = len(network.entry_edges)
    periods = table.entry_weights.shape[0]
    for period in range(periods):
        entry_w = table.entry_weights[period]
        exit_w = table.exit_weights[period]
        for i in range(n_in):
            denom = 1.0 - exit_w[i]  # entry/exit rings align: index i is the same arm
            if denom <= 0.0:
                continue
            for j in range(len(network.exit_edges)):
                if j == i or exit_w[j] == 0.0:
                    continue
                pair_rate = rate * entry_w[i] * (exit_w[j] / denom) / periods
                if pair_rate == 0.0:
                    continue
                route = network.route(network.entry_edges[i], network.exit_edges[j])
                for a, b in zip(route, route[1:]):
                    edge = network.edges[a]
                    mv = network.edge_movement(a, b)
                    lane = 1 if mv == "left" else 0
                    flows[network.tls_id(edge.to_node), _DIR_INDEX[edge.to_dir], lane] += pair_rate
    return flows


def webster_plan(flows: np.ndarray, network: RoadNetwork,
                 saturation: float = SATURATION_FLOW) -> FixedPlan:
    greens = []
    y_totals = []
    for tls in range(network.n_tls):
        ys = []
        for phase in PHASE_MOVES:
            served = [flows[tls, _DIR_INDEX[d], 1 if mv == "left" else 0]
                      for d, mv in phase]
            ys.append(max(served) / saturation)
        y_total = min(sum(ys), MAX_FLOW_RATIO)
        y_totals.append(y_total)
        cycle = min(max(webster_cycle(LOST_TIME, y_total), MIN_CYCLE), MAX_CYCLE)
        green_time = cycle - LOST_TIME
        if y_total > 0.0:
            shares = [y / sum(ys) for y in ys] if sum(ys) > 0 else [0.25] * 4
        else:
            shares = [0.25] * 4
        g = tuple(max(MIN_GREEN, int(np.floor(share * green_time + 0.5))) for share in shares)
        greens.append(g)

    # offsets follow the dominant through direction at free-flow travel time
    dir_flow = flows[:, :, 0].sum(axis=0)
    dom = DIRS[int(np.argmax(dir_flow))]
    link_time = network.arm_length / network.speed_limit
    offsets = []
    for tls in range(network.n_tls):
        r, c = network.tls_node(tls)
        hops = {"N": r, "S": network.rows - 1 - r, "W": c, "E": network.cols - 1 - c}[dom]
        cycle = sum(greens[tls]) + LOST_TIME
        offsets.append(int(round(hops * link_time)) % cycle)
    return FixedPlan(greens, offsets)


class FixedTimeController:
    """Replays a FixedPlan: switch exactly when each scheduled green expires."""

    def __init__(self, plan: FixedPlan):
        self.plan = plan
        self._switch_times = []
        for greens in plan.greens:
            times = set()
            acc = 0
            for g in greens:
                acc += g
                times.add(acc)
                acc += YELLOW_TIME
            self._switch_times.append(times)

    def act(self, t: int, state=None, frame=None) -> list[int]:
        commands = []
        for tls, times in enumerate(self._switch_times):
            tau = t - self.plan.offsets[tls]
            if tau < 0:
                commands.append(MAINTAIN)  # hold phase 0 until the offset starts
                continue
            tau %= self.plan.cycle(tls)
            commands.append(SWITCH if tau in times else MAINTAIN)
        return commands


@dataclass
class ActuatedTlsState:
    light: LightState
    last_detection: int = 0  # green-elapsed second of the latest detection


class ActuatedController:
    """Gap-out actuation per isolated intersection.

    Holds green at least MIN_GREEN seconds, then switches once the served
    movements' detectors have been quiet for GAP_TIME seconds (detections
    before min green anchor at min green), and always switches at
    MAX_GREEN.  A mirrored light state tracks the simulator's phase.
    """

    def __init__(self, n_tls: int):
        self.states = [ActuatedTlsState(LightState()) for _ in range(n_tls)]

    def act(self, t: int, state=None, frame: SensorFrame | None = None) -> list[int]:
        commands = []
        for tls, st in enumerate(self.states):
            light = st.light
            cmd = MAINTAIN
            if not light.in_yellow:
                detected = False
                for d, mv in PHASE_MOVES[light.phase_index]:
                    lane = 1 if mv == "left" else 0
                    if frame is not None and frame.vehicle_count[tls, _DIR_INDEX[d], lane] > 0:
                        detected = True
                        break
                if detected:
                    st.last_detection = light.phase_elapsed
                gap_start = max(MIN_GREEN, st.last_detection)
                if light.phase_elapsed >= MAX_GREEN:
                    cmd = SWITCH
                elif light.phase_elapsed >= MIN_GREEN and light.phase_elapsed >= gap_start + GAP_TIME:
                    cmd = SWITCH
            prev_phase = light.phase_index
            light.command(cmd)
            light.tick()
            if light.phase_index != prev_phase:
                st.last_detection = 0  # fresh green: restart the gap window
            commands.append(cmd)
        return commands


class RandomController:
    """Uniform maintain/switch coin flip per intersection per second."""

    def __init__(self, n_tls: int, seed: int):
        self.n_tls = n_tls
        self.rng = np.random.default_rng(seed)

    def act(self, t: int, state=None, frame=None) -> list[int]:
        return list(self.rng.integers(0, 2, size=self.n_tls))


class RLController:
    """Trained stochastic policy; a per-run seed keeps evaluations reproducible."""

    def __init__(self, params: NetParams, seed: int = 0):
        self.params = params
        self.rng = np.random.default_rng(seed)

    def act(self, t: int, state=None, frame=None) -> list[int]:
        policy = forward(self.params, state).policy
        return list(sample_actions(policy, self.rng))


def plan_to_text(plan: FixedPlan) -> str:
    lines = ["fixed-time plan"]
    for tls, greens in enumerate(plan.greens):
        lines.append(f"tls {tls} cycle {plan.cycle(tls)} greens {list(greens)} "
                     f"offset {plan.offsets[tls]}")
    return "\n".join(lines) + "\n"

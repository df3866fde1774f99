"""Deterministic microscopic simulation of the signalized grid.

Link dynamics are point-queue: vehicles advance at free-flow speed until
they hit the stop line or the tail of a queue (7.5 m stored per vehicle),
and each lane discharges through the junction at the saturation rate while
its head movement has green.  Right turns are never signal-blocked.  One
call to :meth:`GridSim.step` advances exactly one second:

    1. apply the per-light maintain/switch commands,
    2. insert pending vehicles where their entry lane has room,
    3. advance all vehicles (removing those finishing their route),
    4. discharge queue heads across junctions (saturation-limited),
    5. accumulate waiting time and teleport stuck vehicles.

The simulator itself is free of randomness; demand generation owns all
random draws.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .grid import DIRS, LEFT, N_PHASES, PHASE_MOVES, RIGHT, RoadNetwork

MAINTAIN = 0
SWITCH = 1

HALT_THRESHOLD = 0.1        # m/s; below this a vehicle counts as halting
TELEPORT_THRESHOLD = 300    # s of consecutive halting before removal
SATURATION_FLOW = 0.5       # veh/s discharged per lane during green
VEHICLE_SPACE = 7.5         # m of storage per queued vehicle
MIN_GREEN = 5               # s a phase must hold before a switch is honored
YELLOW_TIME = 3             # s of all-blocked transition after a switch
DETECTION_RANGE = 150.0     # m upstream covered by each sensor
ZONE_CAPACITY = 20          # vehicles storable strictly within the zone

_EPS = 1e-9


class Vehicle:
    __slots__ = ("vid", "route", "route_pos", "lane", "pos", "speed",
                 "entered_at", "waiting_accum", "halt_streak")

    def __init__(self, vid: int, route: tuple[int, ...]):
        self.vid = vid
        self.route = route
        self.route_pos = 0
        self.lane = 0
        self.pos = 0.0
        self.speed = 0.0
        self.entered_at = -1
        self.waiting_accum = 0
        self.halt_streak = 0

    @property
    def edge(self) -> int:
        return self.route[self.route_pos]


@dataclass
class LightState:
    """Four-phase signal head with min-green and a 3 s yellow interval."""

    phase_index: int = 0
    in_yellow: bool = False
    phase_elapsed: int = 0
    yellow_elapsed: int = 0

    def command(self, cmd: int) -> None:
        # A switch is honored only from green, after the minimum green time.
        if cmd == SWITCH and not self.in_yellow and self.phase_elapsed >= MIN_GREEN:
            self.in_yellow = True
            self.yellow_elapsed = 0

    def tick(self) -> None:
        if self.in_yellow:
            self.yellow_elapsed += 1
            if self.yellow_elapsed >= YELLOW_TIME:
                self.phase_index = (self.phase_index + 1) % N_PHASES
                self.in_yellow = False
                self.phase_elapsed = 0
                self.yellow_elapsed = 0
        else:
            self.phase_elapsed += 1

    def permits(self, arrive_dir: str, movement: str) -> bool:
        if movement == RIGHT:
            return True
        if self.in_yellow:
            return False
        return (arrive_dir, movement) in PHASE_MOVES[self.phase_index]


@dataclass(frozen=True)
class ArrivedRecord:
    entered_at: int
    arrival_time: int
    waiting_accum: int
    ideal_time: float


@dataclass(frozen=True)
class StepEvents:
    inserted: int
    arrived: int
    teleported: int
    arrived_vehicle_records: tuple[ArrivedRecord, ...]


@dataclass
class SensorFrame:
    """Per (tls, arm, movement) detector readings.

    Arrays are indexed [tls, dir, movement] with dirs in N,E,S,W order and
    movement 0 = through lane, 1 = left-turn lane.  ``vehicle_count`` is the
    total presence in the zone (needed by actuated control); ``halting``
    counts only vehicles below the halt threshold.  ``mean_speed`` averages
    over all vehicles in the zone and reports the speed limit when empty.
    """

    halting: np.ndarray
    mean_speed: np.ndarray
    vehicle_count: np.ndarray
    speed_limit: float


@dataclass
class StepRow:
    t: int
    inserted: int
    arrived: int
    teleported: int
    on_network: int


class GridSim:
    """Mutable simulation state for one episode on one grid."""

    def __init__(self, network: RoadNetwork):
        self.net = network
        self.t = 0
        self.lights = [LightState() for _ in range(network.n_tls)]
        self.lanes: list[list[deque[Vehicle]]] = [
            [deque() for _ in range(network.lanes)] for _ in network.edges
        ]
        self.credits = np.zeros((len(network.edges), network.lanes))
        self.pending: dict[int, deque[Vehicle]] = {e: deque() for e in network.entry_edges}
        self.total_inserted = 0
        self.total_arrived = 0
        self.total_teleported = 0
        self.on_network = 0
        self.step_log: list[StepRow] = []
        self.arrived_records: list[ArrivedRecord] = []
        self._next_vid = 0

    # ------------------------------------------------------------ insertion

    def add_vehicle(self, route: tuple[int, ...]) -> Vehicle:
        """Queue a vehicle outside the network; it enters when there is room."""
        veh = Vehicle(self._next_vid, route)
        self._next_vid += 1
        self.pending[route[0]].append(veh)
        return veh

    def pending_count(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def _lane_for(self, veh: Vehicle) -> int:
        if veh.route_pos + 1 >= len(veh.route):
            return 0
        mv = self.net.edge_movement(veh.route[veh.route_pos], veh.route[veh.route_pos + 1])
        return 1 if mv == LEFT else 0

    def _insert_pending(self) -> int:
        inserted = 0
        for entry in self.net.entry_edges:
            queue = self.pending[entry]
            while queue:
                veh = queue[0]
                lane = self._lane_for_entry(veh)
                dq = self.lanes[entry][lane]
                if dq and dq[-1].pos < VEHICLE_SPACE:
                    break
                queue.popleft()
                veh.lane = lane
                veh.pos = 0.0
                veh.speed = 0.0
                veh.entered_at = self.t
                dq.append(veh)
                inserted += 1
        return inserted

    def _lane_for_entry(self, veh: Vehicle) -> int:
        mv = self.net.edge_movement(veh.route[0], veh.route[1])
        return 1 if mv == LEFT else 0

    # -------------------------------------------------------------- advance

    def _advance(self) -> list[ArrivedRecord]:
        arrivals: list[ArrivedRecord] = []
        speed = self.net.speed_limit
        for edge in self.net.edges:
            length = edge.length
            is_exit = edge.to_node is None
            for dq in self.lanes[edge.index]:
                if not dq:
                    continue
                survivors: deque[Vehicle] = deque()
                lead_pos = None
                for veh in dq:
                    target = veh.pos + speed
                    if lead_pos is not None:
                        target = min(target, lead_pos - VEHICLE_SPACE)
                    new_pos = min(target, length)
                    if new_pos < veh.pos:
                        new_pos = veh.pos  # leader backed into us cannot happen; guard rounding
                    if is_exit and new_pos >= length - _EPS:
                        ideal = len(veh.route) * self.net.arm_length / speed
                        arrivals.append(ArrivedRecord(veh.entered_at, self.t,
                                                      veh.waiting_accum, ideal))
                        continue
                    veh.speed = new_pos - veh.pos
                    veh.pos = new_pos
                    survivors.append(veh)
                    lead_pos = new_pos
                dq.clear()
                dq.extend(survivors)
        return arrivals

    # ------------------------------------------------------------ discharge

    def _discharge(self) -> None:
        net = self.net
        for tls in range(net.n_tls):
            node = net.tls_node(tls)
            light = self.lights[tls]
            for d in DIRS:
                edge_idx = net.inbound[node].get(d)
                if edge_idx is None:
                    continue
                length = net.edges[edge_idx].length
                for lane in range(net.lanes):
                    dq = self.lanes[edge_idx][lane]
                    credit = self.credits[edge_idx, lane]
                    if dq and dq[0].pos >= length - _EPS:
                        head_mv = self.net.edge_movement(dq[0].edge, dq[0].route[dq[0].route_pos + 1])
                        if light.permits(d, head_mv):
                            credit += SATURATION_FLOW
                            while credit >= 1.0 and dq and dq[0].pos >= length - _EPS:
                                veh = dq[0]
                                mv = net.edge_movement(veh.edge, veh.route[veh.route_pos + 1])
                                if not light.permits(d, mv):
                                    break
                                nxt = veh.route[veh.route_pos + 1]
                                veh.route_pos += 1
                                nlane = self._lane_for(veh)
                                ndq = self.lanes[nxt][nlane]
                                if ndq and ndq[-1].pos < VEHICLE_SPACE:
                                    veh.route_pos -= 1
                                    break  # downstream has no room: spillback
                                dq.popleft()
                                veh.lane = nlane
                                veh.pos = 0.0
                                veh.speed = self.net.speed_limit
                                ndq.append(veh)
                                credit -= 1.0
                        else:
                            credit = 0.0
                    else:
                        credit += SATURATION_FLOW
                    self.credits[edge_idx, lane] = min(credit, 1.0)

    # ----------------------------------------------------------- accounting

    def _account(self) -> int:
        teleported = 0
        for edge in self.net.edges:
            for dq in self.lanes[edge.index]:
                stuck: list[Vehicle] = []
                for veh in dq:
                    if veh.speed < HALT_THRESHOLD:
                        veh.waiting_accum += 1
                        veh.halt_streak += 1
                        if veh.halt_streak >= TELEPORT_THRESHOLD:
                            stuck.append(veh)
                    else:
                        veh.halt_streak = 0
                for veh in stuck:
                    dq.remove(veh)
                    teleported += 1
        return teleported

    # ------------------------------------------------------------------ api

    def step(self, commands) -> StepEvents:
        """Advance one second under the given per-light commands."""
        if len(commands) != self.net.n_tls:
            raise ValueError(f"expected {self.net.n_tls} commands, got {len(commands)}")
        for light, cmd in zip(self.lights, commands):
            light.command(cmd)
        inserted = self._insert_pending()
        arrivals = self._advance()
        self._discharge()
        teleported = self._account()
        for light in self.lights:
            light.tick()

        self.total_inserted += inserted
        self.total_arrived += len(arrivals)
        self.total_teleported += teleported
        self.on_network += inserted - len(arrivals) - teleported
        self.arrived_records.extend(arrivals)
        self.step_log.append(StepRow(self.t, inserted, len(arrivals), teleported,
                                     self.on_network))
        self.t += 1
        return StepEvents(inserted, len(arrivals), teleported, tuple(arrivals))

    def read_sensors(self) -> SensorFrame:
        net = self.net
        halting = np.zeros((net.n_tls, 4, 2), dtype=np.int64)
        counts = np.zeros((net.n_tls, 4, 2), dtype=np.int64)
        speeds = np.full((net.n_tls, 4, 2), net.speed_limit)
        for tls in range(net.n_tls):
            node = net.tls_node(tls)
            for di, d in enumerate(DIRS):
                edge_idx = net.inbound[node].get(d)
                if edge_idx is None:
                    continue
                length = net.edges[edge_idx].length
                cutoff = length - DETECTION_RANGE
                for lane in range(net.lanes):
                    total = 0
                    halts = 0
                    speed_sum = 0.0
                    for veh in self.lanes[edge_idx][lane]:
                        if veh.pos <= cutoff:
                            break  # deque is ordered front (nearest stop line) to back
                        total += 1
                        speed_sum += veh.speed
                        if veh.speed < HALT_THRESHOLD:
                            halts += 1
                    counts[tls, di, lane] = total
                    halting[tls, di, lane] = halts
                    if total:
                        speeds[tls, di, lane] = speed_sum / total
        return SensorFrame(halting, speeds, counts, net.speed_limit)

    def vehicles(self):
        for edge in self.net.edges:
            for dq in self.lanes[edge.index]:
                yield from dq

    def count_on_network(self) -> int:
        return sum(1 for _ in self.vehicles())

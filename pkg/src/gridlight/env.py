"""Episode-oriented wrapper joining simulator, demand, encoding, and rewards.

Each environment owns one simulator instance, its own demand draw, and its
own random stream, so independent instances can run concurrently with no
shared mutable state.  Reset draws a fresh (b, p) demand level and routing
table from the env's seed sequence, making consecutive episodes differ in
demand while staying fully reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import DemandConfig, build_routing_table, sample_arrivals, spawn
from .encoding import encode_state, state_shape
from .grid import DEFAULT_ARM_LENGTH, RoadNetwork, build_grid
from .metrics import EpisodeMetrics, episode_metrics
from .rewards import global_reward, local_rewards
from .sim import GridSim, SensorFrame, StepEvents


@dataclass(frozen=True)
class DemandSpec:
    """Demand levels to draw from at each episode start.

    ``demands`` are veh/h targets mapped to the arrival rate via
    p = 3600 / demand; ``b_options`` are the burstiness caps.
    """

    demands: tuple[float, ...] = (2400.0,)
    b_options: tuple[int, ...] = (30,)
    periods: int = 4

    def sample(self, rng: np.random.Generator) -> tuple[int, float]:
        demand = self.demands[int(rng.integers(len(self.demands)))]
        b = int(self.b_options[int(rng.integers(len(self.b_options)))])
        return b, 3600.0 / demand


@dataclass
class EnvStep:
    state: np.ndarray
    global_raw: float
    locals_raw: np.ndarray
    done: bool
    events: StepEvents
    frame: SensorFrame


class TrafficEnv:
    def __init__(self, rows: int, cols: int, episode_len: int, demand: DemandSpec,
                 seed: int, arm_length: float = DEFAULT_ARM_LENGTH):
        self.net: RoadNetwork = build_grid(rows, cols, arm_length)
        self.episode_len = episode_len
        self.demand = demand
        self._seq = np.random.SeedSequence(seed)
        self.sim: GridSim | None = None
        self.t = 0
        self.state = np.zeros(state_shape(self.net))
        self.demand_cfg: DemandConfig | None = None
        self.table = None

    def reset(self) -> np.ndarray:
        self.rng = np.random.default_rng(self._seq.spawn(1)[0])
        b, p = self.demand.sample(self.rng)
        self.demand_cfg = DemandConfig(b=b, p=p, episode_length=self.episode_len,
                                       periods=self.demand.periods)
        self.table = build_routing_table(self.rng, self.net, self.demand.periods)
        self.sim = GridSim(self.net)
        self.t = 0
        self.last_frame = self.sim.read_sensors()
        self.state = encode_state(self.last_frame, self.net)
        return self.state

    def step(self, commands) -> EnvStep:
        if self.sim is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.episode_len:
            raise RuntimeError("episode finished; call reset()")
        count = sample_arrivals(self.rng, self.demand_cfg)
        spawn(self.rng, self.sim, count, self.table, self.t, self.demand_cfg)
        events = self.sim.step(commands)
        frame = self.sim.read_sensors()
        self.t += 1
        self.last_frame = frame
        self.state = encode_state(frame, self.net)
        return EnvStep(self.state, global_reward(events), local_rewards(frame),
                       self.t >= self.episode_len, events, frame)

    def metrics(self) -> EpisodeMetrics:
        return episode_metrics(self.sim)

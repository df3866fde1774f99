"""Deep-RL traffic-signal laboratory on a deterministic grid microsimulator."""

from .agent import NetConfig, forward, init_network
from .bench import ExperimentConfig
from .env import DemandSpec, TrafficEnv
from .grid import RoadNetwork, build_grid
from .ppo import TrainConfig, train
from .sim import GridSim

__all__ = [
    "NetConfig", "forward", "init_network", "ExperimentConfig", "DemandSpec",
    "TrafficEnv", "RoadNetwork", "build_grid", "TrainConfig", "train", "GridSim",
]

"""Global, local, and hybrid reward signals.

The global part is the network's net outflow for the step (arrivals minus
insertions, teleports excluded from arrivals).  The local part penalizes
queue imbalance at one intersection: minus the absolute difference between
the largest east-west halting count and the largest north-south halting
count.  The hybrid blends the two with a weight that anneals from local to
global over training.
"""
from __future__ import annotations

import numpy as np

from .sim import SensorFrame, StepEvents


def global_reward(events: StepEvents) -> float:
    return float(events.arrived - events.inserted)


def local_reward(frame: SensorFrame, tls_id: int) -> float:
    # dirs are N,E,S,W: indices 1 and 3 face east-west, 0 and 2 north-south
    q_we = frame.halting[tls_id, (1, 3), :].max()
    q_ns = frame.halting[tls_id, (0, 2), :].max()
    return -abs(float(q_we) - float(q_ns))


def local_rewards(frame: SensorFrame) -> np.ndarray:
    q_we = frame.halting[:, (1, 3), :].max(axis=(1, 2))
    q_ns = frame.halting[:, (0, 2), :].max(axis=(1, 2))
    return -np.abs(q_we.astype(float) - q_ns.astype(float))


def hybrid_reward(global_part: float, locals_: np.ndarray, beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * global_part + (1.0 - beta) * float(np.mean(locals_))


def beta_schedule(progress: float) -> float:
    """Linear anneal of the global-reward weight; clamps out-of-range input."""
    return min(max(progress, 0.0), 1.0)

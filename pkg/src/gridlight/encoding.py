"""Sensor frames to network-input tensors.

Each intersection owns a 4x4 block of the observation; intersection (r, c)
maps to rows 4r..4r+3 and columns 4c..4c+3, giving a <2, 4*rows, 4*cols>
tensor overall.  Inside a block the eight sensors sit on the border in a
fixed layout (x marks zero padding):

        col 0     col 1      col 2      col 3
    row 0   x     N through  N left       x
    row 1  W left     x         x      E through
    row 2  W through  x         x      E left
    row 3   x     S left     S through    x

Channel 0 carries halting counts scaled by the 20-vehicle zone capacity;
channel 1 carries mean speeds scaled by the speed limit.  Both live in
[0, 1] and padding cells are exactly zero.
"""
from __future__ import annotations

import numpy as np

from .grid import RoadNetwork
from .sim import SensorFrame, ZONE_CAPACITY

# (dir index, movement index) -> (row, col) inside the 4x4 block
BLOCK_LAYOUT = {
    (0, 0): (0, 1),  # N through
    (0, 1): (0, 2),  # N left
    (1, 0): (1, 3),  # E through
    (1, 1): (2, 3),  # E left
    (2, 0): (3, 2),  # S through
    (2, 1): (3, 1),  # S left
    (3, 0): (2, 0),  # W through
    (3, 1): (1, 0),  # W left
}


def state_shape(network: RoadNetwork) -> tuple[int, int, int]:
    return (2, 4 * network.rows, 4 * network.cols)


def encode_state(frame: SensorFrame, network: RoadNetwork) -> np.ndarray:
    """Pack a sensor frame into the <2, 4R, 4C> observation tensor."""
    out = np.zeros(state_shape(network))
    for tls in range(network.n_tls):
        r, c = network.tls_node(tls)
        for (di, mi), (br, bc) in BLOCK_LAYOUT.items():
            row = 4 * r + br
            col = 4 * c + bc
            out[0, row, col] = frame.halting[tls, di, mi] / ZONE_CAPACITY
            out[1, row, col] = frame.mean_speed[tls, di, mi] / frame.speed_limit
    return out

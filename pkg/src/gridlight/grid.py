"""Signalized R x C grid topology.

Conventions used throughout the package:

* Node (r, c) sits at row r (0 = top) and column c (0 = left); its traffic
  light id is ``r * cols + c``.
* An edge's ``to_dir`` names the arm of the downstream node it arrives on
  (an edge with to_dir 'N' carries traffic that entered from the north and
  is heading south).
* Every outer arm has one entry edge (into the grid) and one exit edge
  (out of it), so a grid has 2*(rows+cols) entry and 2*(rows+cols) exit
  edges.  Boundary edges are ordered clockwise around the perimeter
  starting at the north arm of node (0, 0); routing distributions wrap
  around this ring.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

DIRS = ("N", "E", "S", "W")
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
_NEIGHBOR = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}

THROUGH, LEFT, RIGHT = "through", "left", "right"

# movement implied by (arrival arm, departure arm)
_MOVEMENT = {
    "N": {"S": THROUGH, "E": LEFT, "W": RIGHT},
    "S": {"N": THROUGH, "W": LEFT, "E": RIGHT},
    "E": {"W": THROUGH, "S": LEFT, "N": RIGHT},
    "W": {"E": THROUGH, "N": LEFT, "S": RIGHT},
}

# Fig.-style phase ring: NS through, NS left, EW through, EW left.
PHASE_MOVES = (
    frozenset({("N", THROUGH), ("S", THROUGH)}),
    frozenset({("N", LEFT), ("S", LEFT)}),
    frozenset({("E", THROUGH), ("W", THROUGH)}),
    frozenset({("E", LEFT), ("W", LEFT)}),
)
N_PHASES = len(PHASE_MOVES)

DEFAULT_ARM_LENGTH = 500.0
DEFAULT_SPEED_LIMIT = 13.89  # m/s


def movement(arrive_dir: str, depart_dir: str) -> str:
    """Classify the turn taken between the arrival and departure arms."""
    try:
        return _MOVEMENT[arrive_dir][depart_dir]
    except KeyError:
        raise ValueError(f"no movement from arm {arrive_dir} to arm {depart_dir}") from None


@dataclass(frozen=True)
class Edge:
    index: int
    name: str
    from_node: tuple[int, int] | None  # None for entry edges
    to_node: tuple[int, int] | None    # None for exit edges
    from_dir: str | None               # arm of from_node the edge departs on
    to_dir: str | None                 # arm of to_node the edge arrives on
    length: float
    lanes: int


class RoadNetwork:
    """Directed-edge view of the grid plus routing helpers."""

    def __init__(self, rows: int, cols: int, arm_length: float = DEFAULT_ARM_LENGTH,
                 lanes: int = 2, speed_limit: float = DEFAULT_SPEED_LIMIT):
        if rows < 1 or cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
        if arm_length <= 0:
            raise ValueError(f"arm_length must be positive, got {arm_length}")
        self.rows = rows
        self.cols = cols
        self.arm_length = float(arm_length)
        self.lanes = lanes
        self.speed_limit = float(speed_limit)
        self.edges: list[Edge] = []
        self.entry_edges: list[int] = []
        self.exit_edges: list[int] = []
        # per node: arm direction -> edge index
        self.inbound: dict[tuple[int, int], dict[str, int]] = {}
        self.outbound: dict[tuple[int, int], dict[str, int]] = {}
        self._route_cache: dict[tuple[int, int], tuple[int, ...]] = {}
        self._build()

    # ------------------------------------------------------------- topology

    def _add_edge(self, name, from_node, to_node, from_dir, to_dir) -> int:
        idx = len(self.edges)
        self.edges.append(Edge(idx, name, from_node, to_node, from_dir, to_dir,
                               self.arm_length, self.lanes))
        if to_node is not None:
            self.inbound.setdefault(to_node, {})[to_dir] = idx
        if from_node is not None:
            self.outbound.setdefault(from_node, {})[from_dir] = idx
        return idx

    def _build(self):
        rows, cols = self.rows, self.cols
        for r in range(rows):
            for c in range(cols):
                for d in DIRS:
                    dr, dc = _NEIGHBOR[d]
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < rows and 0 <= nc < cols:
                        self._add_edge(f"n{r}.{c}-n{nr}.{nc}", (r, c), (nr, nc),
                                       d, OPPOSITE[d])
        for node, d in self._perimeter_arms():
            self._add_edge(f"entry-{d}-n{node[0]}.{node[1]}", None, node, None, d)
        for node, d in self._perimeter_arms():
            self._add_edge(f"exit-{d}-n{node[0]}.{node[1]}", node, None, d, None)
        self.entry_edges = [e.index for e in self.edges if e.from_node is None]
        self.exit_edges = [e.index for e in self.edges if e.to_node is None]

    def _perimeter_arms(self):
        """Outer arms in clockwise ring order starting at (0,0) north."""
        rows, cols = self.rows, self.cols
        arms = []
        for c in range(cols):
            arms.append(((0, c), "N"))
        for r in range(rows):
            arms.append(((r, cols - 1), "E"))
        for c in range(cols - 1, -1, -1):
            arms.append(((rows - 1, c), "S"))
        for r in range(rows - 1, -1, -1):
            arms.append(((r, 0), "W"))
        return arms

    @property
    def boundary_edges(self) -> list[int]:
        return self.entry_edges + self.exit_edges

    @property
    def n_tls(self) -> int:
        return self.rows * self.cols

    def tls_id(self, node: tuple[int, int]) -> int:
        return node[0] * self.cols + node[1]

    def tls_node(self, tls: int) -> tuple[int, int]:
        return divmod(tls, self.cols)

    def edge_movement(self, edge_idx: int, next_edge_idx: int) -> str:
        """Movement a vehicle takes when leaving edge_idx onto next_edge_idx."""
        e = self.edges[edge_idx]
        n = self.edges[next_edge_idx]
        if e.to_node is None or n.from_node != e.to_node:
            raise ValueError(f"edges {edge_idx} -> {next_edge_idx} are not consecutive")
        return movement(e.to_dir, n.from_dir)

    # -------------------------------------------------------------- routing

    def route(self, entry_idx: int, exit_idx: int) -> tuple[int, ...]:
        """Shortest edge path from an entry edge to an exit edge.

        All edges share one length, so shortest free-flow time is fewest
        edges; ties break on the fixed N,E,S,W expansion order.  Same-arm
        pairs (a U-turn at the gateway node) are rejected.
        """
        key = (entry_idx, exit_idx)
        cached = self._route_cache.get(key)
        if cached is not None:
            return cached
        entry = self.edges[entry_idx]
        exit_ = self.edges[exit_idx]
        if entry.from_node is not None or exit_.to_node is not None:
            raise ValueError("route endpoints must be an entry edge and an exit edge")
        if entry.to_node == exit_.from_node and entry.to_dir == exit_.from_dir:
            raise ValueError("entry and exit share one arm (U-turn)")
        start, goal = entry.to_node, exit_.from_node
        parent: dict[tuple[int, int], tuple[tuple[int, int], int]] = {start: (start, -1)}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == goal:
                break
            for d in DIRS:
                edge_idx = self.outbound[node].get(d)
                if edge_idx is None:
                    continue
                nxt = self.edges[edge_idx].to_node
                if nxt is None or nxt in parent:
                    continue
                parent[nxt] = (node, edge_idx)
                queue.append(nxt)
        if goal not in parent:
            raise ValueError(f"no path between nodes {start} and {goal}")
        inner: list[int] = []
        node = goal
        while node != start:
            node, via = parent[node]
            inner.append(via)
        route = (entry_idx, *reversed(inner), exit_idx)
        self._route_cache[key] = route
        return route

    # ---------------------------------------------------------- description

    def describe(self) -> str:
        """Human-readable structured description of the grid."""
        lines = [
            f"grid {self.rows}x{self.cols}",
            f"arm_length {self.arm_length}",
            f"speed_limit {self.speed_limit}",
            f"lanes_per_edge {self.lanes}",
            f"nodes {self.n_tls}",
            f"edges {len(self.edges)}",
        ]
        for e in self.edges:
            kind = "entry" if e.from_node is None else ("exit" if e.to_node is None else "internal")
            lines.append(f"edge {e.index} {kind} {e.name} length={e.length} lanes={e.lanes}")
        return "\n".join(lines) + "\n"


def build_grid(rows: int, cols: int, arm_length: float = DEFAULT_ARM_LENGTH,
               lanes: int = 2, speed_limit: float = DEFAULT_SPEED_LIMIT) -> RoadNetwork:
    return RoadNetwork(rows, cols, arm_length, lanes, speed_limit)

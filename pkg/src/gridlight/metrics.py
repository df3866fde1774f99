"""Episode-level performance metrics and step-log export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .sim import ArrivedRecord, GridSim, StepRow


@dataclass
class EpisodeMetrics:
    arrivals: int
    mean_waiting_time: float      # NaN when nothing arrived
    mean_time_loss: float         # NaN when nothing arrived
    total_inserted: int
    total_teleported: int
    final_on_network: int
    steps: list[StepRow]

    @property
    def accumulation(self) -> list[int]:
        return [row.on_network for row in self.steps]


def finalize_metrics(records: list[ArrivedRecord], step_log: list[StepRow]) -> EpisodeMetrics:
    """Aggregate an episode: arrivals, mean waiting, mean time loss.

    Waiting time and time loss average over arrived vehicles only; with no
    arrivals both are reported as NaN.
    """
    arrivals = len(records)
    if arrivals:
        mean_wait = sum(r.waiting_accum for r in records) / arrivals
        mean_loss = sum((r.arrival_time - r.entered_at) - r.ideal_time for r in records) / arrivals
    else:
        mean_wait = math.nan
        mean_loss = math.nan
    total_inserted = sum(row.inserted for row in step_log)
    total_teleported = sum(row.teleported for row in step_log)
    final_on = step_log[-1].on_network if step_log else 0
    return EpisodeMetrics(arrivals, mean_wait, mean_loss, total_inserted,
                          total_teleported, final_on, list(step_log))


def episode_metrics(sim: GridSim) -> EpisodeMetrics:
    return finalize_metrics(sim.arrived_records, sim.step_log)


def write_step_log_csv(path, step_log: list[StepRow]) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "inserted", "arrived", "teleported", "on_network"])
        for row in step_log:
            writer.writerow([row.t, row.inserted, row.arrived, row.teleported, row.on_network])


def read_step_log_csv(path) -> list[StepRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(StepRow(int(rec["t"]), int(rec["inserted"]), int(rec["arrived"]),
                                int(rec["teleported"]), int(rec["on_network"])))
    return rows

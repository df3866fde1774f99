"""Benchmark harness: train, sweep-evaluate, MFD export, and comparison.

Experiments are described by a flat key = value config file (see
``parse_config_file``); command-line flags override file keys.  Evaluation
sweeps run every (demand, randomness, repetition) cell with per-cell seeds
derived from the base seed, so a sweep is reproducible cell by cell and can
run its cells concurrently without changing any output byte.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .agent import NetConfig, load_params
from .baselines import (
    ActuatedController, FixedTimeController, RandomController, RLController,
    movement_flows, plan_to_text, webster_plan,
)
from .env import DemandSpec, TrafficEnv
from .metrics import read_step_log_csv, write_step_log_csv
from .ppo import TrainConfig, train


class ConfigError(Exception):
    pass


PAPER_DEMANDS = (1800.0, 2222.0, 2903.0, 4186.0, 7500.0, 36000.0)
PAPER_RANDOMNESS = (10, 20, 30, 40, 50, 60)
CONTROLLERS = ("rl", "fixed", "actuated", "random")


@dataclass
class ExperimentConfig:
    # environment
    rows: int = 3
    cols: int = 3
    arm_length: float = 500.0
    episode_len: int = 3600
    periods: int = 4
    seed: int = 0
    # network
    trunk_channels: tuple[int, ...] = (16, 32)
    head_hidden: int = 64
    # training
    horizon: int = 64
    actors: int = 16
    epochs: int = 3
    minibatch: int = 1024
    episodes: int = 50
    gamma: float = 0.99
    lam: float = 0.95
    clip0: float = 0.1
    lr0: float = 1e-4
    c1: float = 1.0
    c2: float = 0.01
    reward: str = "hybrid"
    update_interval: int = 0            # 0 means "use horizon"
    train_demands: tuple[float, ...] = (2400.0,)
    train_b: tuple[int, ...] = PAPER_RANDOMNESS
    resume: str = ""
    # evaluation sweep
    controller: str = "fixed"
    checkpoint: str = ""
    demands: tuple[float, ...] = PAPER_DEMANDS
    randomness: tuple[int, ...] = PAPER_RANDOMNESS
    repetitions: int = 10
    workers: int = 1
    save_steps: bool = False

    def net_config(self) -> NetConfig:
        return NetConfig(self.rows, self.cols, tuple(self.trunk_channels), self.head_hidden)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            horizon=self.horizon, actors=self.actors, epochs=self.epochs,
            minibatch=self.minibatch, episodes=self.episodes, gamma=self.gamma,
            lam=self.lam, clip0=self.clip0, lr0=self.lr0, c1=self.c1, c2=self.c2,
            seed=self.seed, episode_len=self.episode_len, reward_mode=self.reward,
            update_interval=self.update_interval or None,
        )


_TUPLE_FIELDS = {"trunk_channels": int, "train_demands": float, "train_b": int,
                 "demands": float, "randomness": int}


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment.  Errors carry line context."""
    values: dict[str, str] = {}
    known = {f.name for f in fields(ExperimentConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def apply_settings(config: ExperimentConfig, settings: dict[str, str],
                   source: str = "config") -> ExperimentConfig:
    for key, value in settings.items():
        try:
            field_type = ExperimentConfig.__dataclass_fields__[key].type
        except KeyError:
            raise ConfigError(f"{source}: unknown key {key!r}") from None
        try:
            if key in _TUPLE_FIELDS:
                caster = _TUPLE_FIELDS[key]
                parsed = tuple(caster(part.strip()) for part in str(value).split(",") if part.strip())
            elif field_type == "bool" or isinstance(getattr(config, key), bool):
                parsed = str(value).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(getattr(config, key), int):
                parsed = int(value)
            elif isinstance(getattr(config, key), float):
                parsed = float(value)
            else:
                parsed = str(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
        setattr(config, key, parsed)
    return config


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    config = ExperimentConfig()
    if path is not None:
        apply_settings(config, parse_config_file(path), source=str(path))
    if overrides:
        apply_settings(config, overrides, source="command line")
    return config


# ---------------------------------------------------------------------- fmt

def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


# -------------------------------------------------------------------- train

def cmd_train(config: ExperimentConfig, out_dir) -> Path:
    """Train per the config; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = DemandSpec(tuple(config.train_demands), tuple(config.train_b), config.periods)

    def factory(i):
        return TrafficEnv(config.rows, config.cols, config.episode_len, spec,
                          seed=(config.seed, 9091, i), arm_length=config.arm_length)

    resume = config.resume or None
    train(config.train_config(), config.net_config(), factory,
          out_dir=out_dir, resume=resume, verbose=True)
    return out_dir / "checkpoint_latest.ck"


# --------------------------------------------------------------------- eval

RUN_COLUMNS = ["controller", "demand", "b", "rep", "arrived", "mean_waiting_time",
               "mean_time_loss", "inserted", "teleported", "final_on_network"]
SUMMARY_COLUMNS = ["controller", "demand", "b", "runs", "mean_arrived",
                   "mean_waiting_time", "mean_time_loss"]


def _build_controller(kind: str, env: TrafficEnv, params, cell_seed: int):
    n_tls = env.net.n_tls
    if kind == "fixed":
        flows = movement_flows(env.net, env.table, env.demand_cfg.rate)
        return FixedTimeController(webster_plan(flows, env.net))
    if kind == "actuated":
        return ActuatedController(n_tls)
    if kind == "random":
        return RandomController(n_tls, seed=cell_seed)
    if kind == "rl":
        return RLController(params, seed=cell_seed)
    raise ConfigError(f"unknown controller {kind!r}; expected one of {CONTROLLERS}")


def run_episode(env: TrafficEnv, controller):
    """Drive one full episode with a controller; returns EpisodeMetrics."""
    for t in range(env.episode_len):
        commands = controller.act(t, state=env.state, frame=env.last_frame)
        env.step(commands)
    return env.metrics()


def _eval_cell(config: ExperimentConfig, params, demand: float, b: int, rep: int):
    cell_seed = (config.seed, int(round(demand)), int(b), int(rep))
    env = TrafficEnv(config.rows, config.cols, config.episode_len,
                     DemandSpec((demand,), (b,), config.periods),
                     seed=cell_seed, arm_length=config.arm_length)
    env.reset()
    scalar_seed = int(np.random.SeedSequence(cell_seed).generate_state(1)[0])
    controller = _build_controller(config.controller, env, params, scalar_seed)
    for t in range(config.episode_len):
        commands = controller.act(t, state=env.state, frame=env.last_frame)
        env.step(commands)
    metrics = env.metrics()
    row = [config.controller, int(round(demand)), b, rep, metrics.arrivals,
           metrics.mean_waiting_time, metrics.mean_time_loss,
           metrics.total_inserted, metrics.total_teleported, metrics.final_on_network]
    return row, metrics.steps


def cmd_eval(config: ExperimentConfig, out_dir) -> tuple[Path, Path]:
    """Run the full sweep; writes runs.csv and summary.csv, returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = None
    if config.controller == "rl":
        if not config.checkpoint:
            raise ConfigError("controller 'rl' requires a checkpoint")
        if not Path(config.checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {config.checkpoint}")
        params, _, _ = load_params(config.checkpoint)
        if params.config.rows != config.rows or params.config.cols != config.cols:
            raise ConfigError("checkpoint grid size does not match the experiment grid")
    cells = [(demand, b, rep)
             for demand in config.demands
             for b in config.randomness
             for rep in range(config.repetitions)]
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        results = list(pool.map(lambda c: _eval_cell(config, params, *c), cells))
    rows = [row for row, _ in results]
    if config.save_steps:
        steps_dir = out_dir / "steps"
        steps_dir.mkdir(exist_ok=True)
        for (demand, b, rep), (_, steps) in zip(cells, results):
            name = f"run_{config.controller}_{int(round(demand))}_{b}_{rep}.csv"
            write_step_log_csv(steps_dir / name, steps)
    runs_path = out_dir / "runs.csv"
    _write_csv(runs_path, RUN_COLUMNS, rows)

    summary_rows = []
    for demand in config.demands:
        for b in config.randomness:
            group = [r for r in rows if r[1] == int(round(demand)) and r[2] == b]
            summary_rows.append([
                config.controller, int(round(demand)), b, len(group),
                float(np.mean([g[4] for g in group])),
                float(np.nanmean([g[5] for g in group])),
                float(np.nanmean([g[6] for g in group])),
            ])
    summary_path = out_dir / "summary.csv"
    _write_csv(summary_path, SUMMARY_COLUMNS, summary_rows)
    return runs_path, summary_path


def save_webster_plan(config: ExperimentConfig, demand: float, b: int, path) -> None:
    env = TrafficEnv(config.rows, config.cols, config.episode_len,
                     DemandSpec((demand,), (b,), config.periods),
                     seed=(config.seed, int(round(demand)), int(b), 0),
                     arm_length=config.arm_length)
    env.reset()
    plan = webster_plan(movement_flows(env.net, env.table, env.demand_cfg.rate), env.net)
    Path(path).write_text(plan_to_text(plan))


# ---------------------------------------------------------------------- mfd

MFD_COLUMNS = ["t", "accumulation", "cum_inflow", "cum_outflow", "cum_teleported", "balance"]


def cmd_mfd(run_log_path, out_path) -> Path:
    """Accumulation and cumulative outflow series from a per-step run log."""
    steps = read_step_log_csv(run_log_path)
    rows = []
    cum_in = cum_out = cum_tele = 0
    for step in steps:
        cum_in += step.inserted
        cum_out += step.arrived
        cum_tele += step.teleported
        balance = cum_in - cum_out - cum_tele - step.on_network
        rows.append([step.t, step.on_network, cum_in, cum_out, cum_tele, balance])
    _write_csv(out_path, MFD_COLUMNS, rows)
    return Path(out_path)


# ------------------------------------------------------------------ compare

def _read_summary(path) -> tuple[str, dict[tuple[int, int], tuple[float, float, float]]]:
    cells = {}
    controller = None
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            controller = rec["controller"]
            cells[(int(rec["demand"]), int(rec["b"]))] = (
                float(rec["mean_arrived"]), float(rec["mean_waiting_time"]),
                float(rec["mean_time_loss"]))
    return controller, cells


def cmd_compare(report_paths, out_path) -> Path:
    """Percentage deltas of each report against the first (the baseline)."""
    if len(report_paths) < 2:
        raise ConfigError("compare needs at least two summary reports")
    reports = [_read_summary(p) for p in report_paths]
    base_name, base = reports[0]
    grid = sorted(base.keys())
    for name, cells in reports[1:]:
        if sorted(cells.keys()) != grid:
            raise ConfigError(f"report for {name!r} does not share the sweep grid of {base_name!r}")

    header = ["demand", "b"]
    for name, _ in reports:
        header += [f"{name}_arr", f"{name}_wait", f"{name}_loss"]
    for name, _ in reports[1:]:
        header += [f"{name}_arr_delta_pct", f"{name}_wait_delta_pct", f"{name}_loss_delta_pct"]

    def deltas(cell, other_cells):
        out = []
        for k in range(3):
            ref = base[cell][k]
            out.append(100.0 * (other_cells[cell][k] - ref) / ref if ref else math.nan)
        return out

    rows = []
    for cell in grid:
        row = [cell[0], cell[1]]
        for _, cells in reports:
            row += list(cells[cell])
        for _, cells in reports[1:]:
            row += deltas(cell, cells)
        rows.append(row)

    # average row across the whole grid, like the appendix-style tables
    avg = ["all", "all"]
    means = []
    for _, cells in reports:
        vals = np.array([cells[c] for c in grid])
        means.append(vals.mean(axis=0))
        avg += list(vals.mean(axis=0))
    for k, (_, cells) in enumerate(reports[1:], start=1):
        for m in range(3):
            ref = means[0][m]
            avg.append(100.0 * (means[k][m] - ref) / ref if ref else math.nan)
    rows.append(avg)
    _write_csv(out_path, header, rows)
    return Path(out_path)

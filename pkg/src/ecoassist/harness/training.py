"""Training loop, checkpointing and evaluation tables."""

from __future__ import annotations

import csv
import dataclasses
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import dynamics, reward as rw
from ..agent import MpoAgent, ReplayBuffer
from ..config import ExperimentConfig, ScenarioConfig, from_dict
from .cycles import DriveCycle, load_drive_cycle, shipped_cycle
from .episode import (
    TRAJECTORY_COLUMNS, AgentController, BaselineController, DemandModel, Environment, EpisodeMetrics,
    Learner, run_episode,
)
from .scenario import Scenario, randomize_scenario

CHECKPOINT_FORMAT = 1
CURVE_COLUMNS = (
    "episode", "scenario", "return", "mpg", "a_rms", "interventions", "collisions", "z_min", "steps",
    "updates", "critic_loss", "eta",
)
METRIC_COLUMNS = ("scenario", "seed", "controller", "filter", *(f.name for f in dataclasses.fields(EpisodeMetrics)))
TABLE_ROWS = (("MPG", "mpg"), ("a_rms (m/s^2)", "a_rms"), ("Z_mean (m)", "z_mean"), ("Z_min (m)", "z_min"),
              ("collisions", "collisions"), ("interventions", "interventions"), ("mean |delta| (N*m)", "mean_abs_delta"))


def deterministic_torch() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ------------------------------------------------------------------ building
def build_environment(cfg: ExperimentConfig) -> Environment:
    sim = cfg.simulation
    pt = dynamics.Powertrain.load(
        sim.powertrain, max_brake_torque=sim.max_brake_torque, crawl_speed=sim.crawl_speed, r_w=cfg.vehicle.r_w
    )
    d = cfg.demand
    return Environment(
        vehicle=cfg.vehicle, powertrain=pt, ecbf=cfg.ecbf, weights=cfg.reward.weights, norms=cfg.reward.norms,
        dt=sim.dt, scheme=sim.scheme, fit_every=d.fit_every, fit_min_samples=d.min_samples,
        fuel_density=sim.fuel_density, lead_accel=sim.lead_accel,
    )


def load_cycle(name: str, dt: float) -> DriveCycle:
    """A shipped cycle by name, or a CSV path."""
    if name.endswith(".csv") or "/" in name:
        return load_drive_cycle(name, dt)
    return shipped_cycle(name, dt)


def build_scenario(cfg: ExperimentConfig, sc: ScenarioConfig) -> Scenario:
    cycle = load_cycle(sc.cycle, cfg.simulation.dt)
    return Scenario(
        cycle, initial_gap=sc.initial_gap, grade=np.full(len(cycle), math.atan(sc.grade)), mass=sc.mass,
        driver=cfg.driver(sc), name=f"{cycle.name}/{sc.driver}",
    )


def new_demand(cfg: ExperimentConfig) -> DemandModel:
    d = cfg.demand
    hist = rw.DemandHistogram(capacity=d.capacity, confidence=d.confidence, seed=derive_seed(cfg.seed, 2))
    return DemandModel(hist, d.prior)


# --------------------------------------------------------------------- state
@dataclass
class TrainState:
    agent: MpoAgent
    buffer: ReplayBuffer
    rng: np.random.Generator
    demand: DemandModel
    episode: int = 0
    curve: list[dict] = field(default_factory=list)


def initial_train_state(cfg: ExperimentConfig, obs_dim: int) -> TrainState:
    hp = cfg.agent
    agent = MpoAgent(obs_dim, hp, seed=derive_seed(cfg.seed, 0))
    buffer = ReplayBuffer(hp.replay_capacity, obs_dim, hp.retrace_steps)
    return TrainState(agent, buffer, np.random.default_rng(derive_seed(cfg.seed, 1)), new_demand(cfg))


def save_checkpoint(path: str | Path, st: TrainState, cfg: ExperimentConfig) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": cfg.to_dict(),
            "agent": st.agent.state_dict(),
            "buffer": st.buffer.state_dict(),
            "rng": st.rng.bit_generator.state,
            "demand": st.demand.state_dict(),
            "episode": st.episode,
            "curve": list(st.curve),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[TrainState, ExperimentConfig]:
    data = torch.load(path, weights_only=False)
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a format-{CHECKPOINT_FORMAT} checkpoint")
    rng = np.random.default_rng()
    rng.bit_generator.state = data["rng"]
    st = TrainState(
        MpoAgent.from_state_dict(data["agent"]),
        ReplayBuffer.from_state_dict(data["buffer"]),
        rng,
        DemandModel.from_state_dict(data["demand"]),
        data["episode"],
        list(data["curve"]),
    )
    return st, from_dict(data["config"])


# ----------------------------------------------------------------------- CSV
def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_trajectory(path: str | Path, rows: list[dict]) -> None:
    write_csv(path, TRAJECTORY_COLUMNS, rows)


# ------------------------------------------------------------------ training
def training_scenario(cfg: ExperimentConfig, bases: list[Scenario], episode: int) -> Scenario:
    base = bases[episode % len(bases)]
    return randomize_scenario(base, derive_seed(cfg.seed, 3, episode), cfg.training.randomization)


def train(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    episodes: int | None = None,
    log=None,
) -> TrainState:
    """Run (or continue) training up to ``episodes`` total episodes.

    Writes ``curve.csv`` and ``ckpt_<episode>.pt`` files into ``out_dir``.
    The curve is rebuilt from checkpointed rows, so a resumed run emits the
    same bytes as an uninterrupted one.
    """
    deterministic_torch()
    out = Path(out_dir or cfg.training.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    bases = [build_scenario(cfg, sc) for sc in cfg.training.scenarios]
    if resume is not None:
        st, _ = load_checkpoint(resume)
    else:
        st = initial_train_state(cfg, env.obs_spec.dim)
    total = cfg.training.episodes if episodes is None else episodes
    hp = st.agent.hp
    learner = Learner(st.agent, st.buffer, st.rng, hp.update_every, hp.min_replay, hp.batch_size)
    controller = AgentController(st.agent, greedy=False)

    while st.episode < total:
        scn = training_scenario(cfg, bases, st.episode)
        updates_before = st.agent.updates
        m, _ = run_episode(scn, controller, env, cfg.training.filter, st.demand, learner, st.episode, record=False)
        stats = learner.last_stats
        st.curve.append({
            "episode": st.episode, "scenario": scn.name, "return": m.episode_return, "mpg": m.mpg,
            "a_rms": m.a_rms, "interventions": m.interventions, "collisions": m.collisions, "z_min": m.z_min,
            "steps": m.steps, "updates": st.agent.updates - updates_before,
            "critic_loss": stats.critic_loss if stats else float("nan"),
            "eta": stats.eta if stats else float("nan"),
        })
        st.episode += 1
        if log:
            log(f"episode {st.episode}/{total} return={m.episode_return:.2f} mpg={m.mpg:.3f} "
                f"a_rms={m.a_rms:.3f} z_min={m.z_min:.3f} interventions={m.interventions}")
        if st.episode % cfg.training.checkpoint_every == 0 or st.episode == total:
            path = out / f"ckpt_{st.episode:06d}.pt"
            save_checkpoint(path, st, cfg)
            write_csv(out / "curve.csv", CURVE_COLUMNS, st.curve)
            if not cfg.training.keep_checkpoints:
                for old in out.glob("ckpt_*.pt"):
                    if old != path:
                        old.unlink()
    write_csv(out / "curve.csv", CURVE_COLUMNS, st.curve)
    return st


# ---------------------------------------------------------------- evaluation
def _label(sc: ScenarioConfig) -> str:
    return f"{Path(sc.cycle).stem}/{sc.driver}"


def evaluate_controllers(cfg: ExperimentConfig, agent: MpoAgent | None, demand: DemandModel | None = None,
                         out_dir: str | Path | None = None, include_baseline: bool = True,
                         baseline_filter: bool = False) -> list[dict]:
    """Greedy agent (filter per config) and the baseline (raw by default) on every scenario and seed."""
    deterministic_torch()
    env = build_environment(cfg)
    ev = cfg.evaluation
    demand_state = (demand or new_demand(cfg)).state_dict()
    out = Path(out_dir) if out_dir else None
    rows = []
    for sc in ev.scenarios:
        base = build_scenario(cfg, sc)
        for seed in ev.seeds:
            scn = randomize_scenario(base, derive_seed(cfg.seed, 4, seed), ev.randomization)
            runs = []
            if include_baseline:
                runs.append(("baseline", BaselineController(env), baseline_filter))
            if agent is not None:
                runs.append(("agent", AgentController(agent, greedy=True), ev.filter))
            for name, ctrl, filt in runs:
                m, traj = run_episode(scn, ctrl, env, filt, DemandModel.from_state_dict(demand_state),
                                      record=ev.trajectories and out is not None)
                rows.append({"scenario": _label(sc), "seed": seed, "controller": name, "filter": filt, **m.to_row()})
                if ev.trajectories and out is not None:
                    write_trajectory(out / f"traj_{_label(sc).replace('/', '_')}_{seed}_{name}.csv", traj)
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Summary table: one row per (scenario, metric), mean over seeds per controller."""
    table = []
    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    controllers = list(dict.fromkeys(r["controller"] for r in rows))
    for s in scenarios:
        for label, key in TABLE_ROWS:
            row = {"scenario": s, "metric": label}
            for c in controllers:
                vals = [r[key] for r in rows if r["scenario"] == s and r["controller"] == c]
                row[c] = statistics.fmean(vals) if vals else float("nan")
            if "agent" in row and "baseline" in row:
                # signed relative change of the assisted loop over the baseline
                ratio = row["agent"] / row["baseline"] - 1.0 if row["baseline"] else float("nan")
                row["change"] = f"{100.0 * ratio:+.2f}%"
            table.append(row)
    return table


def format_table(table: list[dict]) -> str:
    if not table:
        return ""
    cols = list(table[0])
    cells = [[str(c) for c in cols]]
    for row in table:
        cells.append([f"{row[c]:.4g}" if isinstance(row[c], float) else str(row[c]) for c in cols])
    widths = [max(len(r[i]) for r in cells) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) if i < 2 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_evaluation(out_dir: str | Path, rows: list[dict]) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    table = summarize(rows)
    if table:
        write_csv(out / "table.csv", list(table[0]), table)
    text = format_table(table)
    (out / "table.txt").write_text(text)
    return text


def evaluate(checkpoint: str | Path, cfg: ExperimentConfig | None = None, out_dir: str | Path = "eval") -> str:
    """Evaluate a checkpoint against the raw baseline; returns the aligned text table."""
    st, saved = load_checkpoint(checkpoint)
    cfg = cfg or saved
    rows = evaluate_controllers(cfg, st.agent, st.demand, out_dir)
    return write_evaluation(out_dir, rows)


def run_baseline(cfg: ExperimentConfig, out_dir: str | Path = "baseline", filter_on: bool = False) -> str:
    rows = evaluate_controllers(cfg, None, None, out_dir, baseline_filter=filter_on)
    return write_evaluation(out_dir, rows)

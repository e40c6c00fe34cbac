"""Command-line entry point: ``ecoassist <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dynamics, safety
from .config import ConfigError, example_config_text, load_config
from .harness.cycles import CycleFormatError, load_drive_cycle


def _train(args) -> int:
    from .harness.training import train

    cfg = load_config(args.config)
    train(cfg, args.out, resume=args.resume, episodes=args.episodes, log=None if args.quiet else print)
    return 0


def _eval(args) -> int:
    from .harness.training import evaluate

    cfg = load_config(args.config) if args.config else None
    print(evaluate(args.checkpoint, cfg, args.out), end="")
    return 0


def _baseline(args) -> int:
    from .harness.training import run_baseline

    cfg = load_config(args.config)
    print(run_baseline(cfg, args.out, filter_on=args.filter), end="")
    return 0


def _filter_check(args) -> int:
    """Pole report plus a T_max sweep over gap and closing speed."""
    cfg = load_config(args.config)
    ecbf, veh = cfg.ecbf, cfg.vehicle
    p1, p2 = safety.poles(ecbf.k_alpha1, ecbf.k_alpha2)
    print(f"K_alpha = [{ecbf.k_alpha1}, {ecbf.k_alpha2}]  poles = {p1.real:.6f}, {p2.real:.6f}  (accepted)")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    v_h = args.speed
    F_r = dynamics.resistance_force(v_h, 0.0, veh)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z", "v_rel", "v_h", "a_l", "T_max", "p1", "p2"])
        for z in np.linspace(ecbf.offset, 100.0, args.points):
            for v_rel in np.linspace(-15.0, 5.0, args.points):
                st = dynamics.VehicleState(v_h=v_h, v_l=max(v_h + v_rel, 0.0), z=float(z), n_g=5, a=0.0,
                                           theta=0.0, m_v=veh.m_v, in_range=True)
                t_max = safety.max_safe_torque(st, 0.0, F_r, ecbf, veh)
                w.writerow([repr(float(z)), repr(float(st.v_rel)), v_h, 0.0, repr(float(t_max)),
                            repr(p1.real), repr(p2.real)])
    print(f"wrote {out}")
    return 0


def _cycle_validate(args) -> int:
    try:
        cyc = load_drive_cycle(args.file, args.dt)
    except (CycleFormatError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"{cyc.name}: {len(cyc)} samples, dt={cyc.dt:g} s, duration={cyc.duration:g} s, "
          f"v_max={cyc.v.max():.2f} m/s, distance={float(np.sum(cyc.v[:-1]) * cyc.dt):.1f} m")
    return 0


def _example_config(args) -> int:
    print(example_config_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecoassist", description="Safe RL driver-assist simulator")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent with the safety filter on")
    t.add_argument("config")
    t.add_argument("--out", default=None, help="output directory (default: training.out_dir)")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--episodes", type=int, default=None, help="override total episode count")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint against the raw baseline")
    e.add_argument("checkpoint")
    e.add_argument("config", nargs="?", default=None, help="defaults to the config stored in the checkpoint")
    e.add_argument("--out", default="eval")
    e.set_defaults(func=_eval)

    b = sub.add_parser("baseline", help="run the baseline controller on the evaluation scenarios")
    b.add_argument("config", nargs="?", default=None)
    b.add_argument("--out", default="baseline")
    b.add_argument("--filter", action="store_true", help="wrap the baseline in the safety filter")
    b.set_defaults(func=_baseline)

    f = sub.add_parser("filter-check", help="report filter poles and sweep the torque bound")
    f.add_argument("config", nargs="?", default=None)
    f.add_argument("--out", default="filter_check.csv")
    f.add_argument("--points", type=int, default=21)
    f.add_argument("--speed", type=float, default=15.0, help="ego speed for the sweep (m/s)")
    f.set_defaults(func=_filter_check)

    c = sub.add_parser("cycle-validate", help="check a drive-cycle CSV")
    c.add_argument("file")
    c.add_argument("--dt", type=float, default=0.1)
    c.set_defaults(func=_cycle_validate)

    x = sub.add_parser("example-config", help="print the annotated example config")
    x.set_defaults(func=_example_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

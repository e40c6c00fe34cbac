"""Drive cycles: CSV loading, validation, resampling and synthetic generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class CycleFormatError(ValueError):
    """Malformed drive-cycle file; the message carries the offending line number."""


@dataclass(frozen=True)
class DriveCycle:
    name: str
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or len(t) < 2:
            raise ValueError("cycle needs matching 1-D time and speed arrays (>= 2 samples)")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("cycle time grid must be strictly increasing")
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-9):
            raise ValueError("cycle time grid must be uniform (use resample)")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("cycle speeds must be finite and nonnegative")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)

    def lead_accel(self) -> np.ndarray:
        """Forward differences ``(v[k+1] - v[k]) / dt``; the last sample repeats the previous one.

        Forward differences make an explicit-Euler lead update land exactly
        on the next grid sample.
        """
        a = np.diff(self.v) / self.dt
        return np.append(a, a[-1] if len(a) else 0.0)

    def window(self, start: int, length: int) -> "DriveCycle":
        stop = min(start + length, len(self))
        return DriveCycle(self.name, self.t[start:stop] - self.t[start], self.v[start:stop])

    def with_speed(self, v: np.ndarray, name: str | None = None) -> "DriveCycle":
        return DriveCycle(name or self.name, self.t, v)


def resample(t, v, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation onto the grid ``t0, t0 + dt, ...``.

    The first sample is kept; the last one is kept when the span is a
    multiple of ``dt``, otherwise the grid stops at the last full step.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    n = int(np.floor((t[-1] - t[0]) / dt + 1e-9))
    grid = t[0] + dt * np.arange(n + 1)
    if abs(grid[-1] - t[-1]) < 1e-9:
        grid[-1] = t[-1]
    return grid, np.interp(grid, t, v)


def load_drive_cycle(path: str | Path, dt: float | None = 0.1, name: str | None = None) -> DriveCycle:
    """Read a ``t,v`` CSV (seconds, m/s) and resample it to ``dt``.

    With ``dt=None`` the file must already be on a uniform grid.
    """
    path = Path(path)
    ts, vs = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip().lower() for c in row]
                if header[:2] != ["t", "v"]:
                    raise CycleFormatError(f"{path}:{lineno}: expected header 't,v', got {row}")
                continue
            if len(row) < 2:
                raise CycleFormatError(f"{path}:{lineno}: expected two columns, got {row}")
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError as exc:
                raise CycleFormatError(f"{path}:{lineno}: not a number: {row}") from exc
            if not (np.isfinite(t) and np.isfinite(v)):
                raise CycleFormatError(f"{path}:{lineno}: non-finite value")
            if v < 0:
                raise CycleFormatError(f"{path}:{lineno}: negative speed {v}")
            if ts and t <= ts[-1]:
                raise CycleFormatError(f"{path}:{lineno}: time {t} does not increase")
            ts.append(t)
            vs.append(v)
    if header is None or len(ts) < 2:
        raise CycleFormatError(f"{path}: need a header and at least two rows")
    t, v = np.array(ts), np.array(vs)
    if dt is not None:
        uniform = np.allclose(np.diff(t), dt, rtol=0, atol=1e-9)
        if not uniform:
            t, v = resample(t, v, dt)
    return DriveCycle(name or path.stem, t, v)


def shipped_cycle(name: str, dt: float = 0.1) -> DriveCycle:
    """Load one of the synthetic cycles bundled with the package."""
    ref = resources.files("ecoassist.data").joinpath("cycles", f"{name}.csv")
    with resources.as_file(ref) as p:
        return load_drive_cycle(p, dt, name)


def write_cycle(path: str | Path, cycle: DriveCycle) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v"])
        for t, v in zip(cycle.t, cycle.v):
            w.writerow([f"{t:.1f}", f"{v:.4f}"])


def synthetic_urban(
    seed: int,
    duration: float = 200.0,
    dt: float = 0.1,
    cruise=(8.0, 16.0),
    accel=(0.6, 1.2),
    decel=(0.8, 1.6),
    cruise_time=(8.0, 25.0),
    stop_time=(3.0, 10.0),
    name: str = "synthetic_urban",
) -> DriveCycle:
    """Stop-and-go trace: idle, accelerate, cruise, decelerate, repeat."""
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    v = np.zeros(n)
    k = 0
    speed = 0.0
    k += int(rng.uniform(*stop_time) / dt)
    while k < n:
        target = rng.uniform(*cruise)
        a = rng.uniform(*accel)
        while speed < target and k < n:
            speed = min(speed + a * dt, target)
            v[k] = speed
            k += 1
        hold = int(rng.uniform(*cruise_time) / dt)
        v[k : k + hold] = speed
        k += hold
        d = rng.uniform(*decel)
        while speed > 0 and k < n:
            speed = max(speed - d * dt, 0.0)
            v[k] = speed
            k += 1
        k += int(rng.uniform(*stop_time) / dt)
    return DriveCycle(name, dt * np.arange(n), v[:n])

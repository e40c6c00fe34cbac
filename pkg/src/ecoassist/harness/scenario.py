"""Car-following scenarios and their seeded randomization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..driver import IdmParams, perturb
from .cycles import DriveCycle

MASS_RANGE = (5000.0, 10000.0)  # kg


@dataclass(frozen=True)
class Scenario:
    cycle: DriveCycle
    initial_gap: float = 350.0
    grade: np.ndarray | None = None  # rad, one value per cycle sample
    mass: float = 7000.0
    driver: IdmParams = field(default_factory=IdmParams)
    noise_amplitude: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.grade is None:
            object.__setattr__(self, "grade", np.zeros(len(self.cycle)))
        grade = np.asarray(self.grade, dtype=float)
        if grade.shape != (len(self.cycle),):
            raise ValueError("grade profile must have one value per cycle sample")
        object.__setattr__(self, "grade", grade)
        if not self.initial_gap > 0:
            raise ValueError("initial gap must be positive")
        if not MASS_RANGE[0] <= self.mass <= MASS_RANGE[1]:
            raise ValueError(f"mass {self.mass} kg outside {MASS_RANGE}")

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class Randomization:
    """Ranges for training-data randomization; ``Randomization.none()`` disables all."""

    speed_noise: float = 0.3  # m/s, std of the lead-speed perturbation
    noise_corr_time: float = 2.0  # s
    gap_range: tuple[float, float] | None = (20.0, 350.0)
    grade_max: float = 0.04  # rise over run
    grade_segment: float = 20.0  # s
    mass_range: tuple[float, float] | None = (5000.0, 10000.0)
    idm_spread: float = 0.2
    chunk_seconds: float | None = None

    @classmethod
    def none(cls) -> "Randomization":
        return cls(speed_noise=0.0, gap_range=None, grade_max=0.0, mass_range=None, idm_spread=0.0)


def band_limited_noise(n: int, dt: float, std: float, corr_time: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary first-order low-pass filtered Gaussian noise with the given std."""
    if std <= 0 or n == 0:
        return np.zeros(n)
    phi = math.exp(-dt / corr_time)
    w = rng.standard_normal(n) * std * math.sqrt(1.0 - phi * phi)
    x = np.empty(n)
    x[0] = rng.standard_normal() * std
    for k in range(1, n):
        x[k] = phi * x[k - 1] + w[k]
    return x


def grade_profile(n: int, dt: float, grade_max: float, segment: float, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant grade (rad), uniform in ``[-grade_max, grade_max]`` per segment."""
    if grade_max <= 0:
        return np.zeros(n)
    per = max(int(round(segment / dt)), 1)
    n_seg = -(-n // per)
    slopes = np.arctan(rng.uniform(-grade_max, grade_max, size=n_seg))
    return np.repeat(slopes, per)[:n]


def randomize_scenario(base: Scenario, seed: int, rand: Randomization = Randomization()) -> Scenario:
    """Deterministic (in ``seed``) perturbation of ``base``."""
    rng = np.random.default_rng(seed)
    cycle = base.cycle
    grade = base.grade
    if rand.chunk_seconds is not None:
        length = int(round(rand.chunk_seconds / cycle.dt)) + 1
        if length < len(cycle):
            start = int(rng.integers(0, len(cycle) - length + 1))
            cycle = cycle.window(start, length)
            grade = grade[start : start + length]
    noise = 0.0
    if rand.speed_noise > 0:
        moving = cycle.v > 0.5
        v = cycle.v + moving * band_limited_noise(len(cycle), cycle.dt, rand.speed_noise, rand.noise_corr_time, rng)
        cycle = cycle.with_speed(np.maximum(v, 0.0))
        noise = rand.speed_noise
    gap = base.initial_gap if rand.gap_range is None else float(rng.uniform(*rand.gap_range))
    if rand.grade_max > 0:
        grade = grade_profile(len(cycle), cycle.dt, rand.grade_max, rand.grade_segment, rng)
    mass = base.mass if rand.mass_range is None else float(rng.uniform(*rand.mass_range))
    driver = perturb(base.driver, rng, rand.idm_spread)
    unchanged = (
        cycle is base.cycle and gap == base.initial_gap and grade is base.grade
        and mass == base.mass and driver is base.driver
    )
    if unchanged:
        return base
    return replace(base, cycle=cycle, initial_gap=gap, grade=grade, mass=mass, driver=driver,
                   noise_amplitude=noise, seed=seed)

"""Longitudinal truck model: resistance, powertrain back-calculation, fuel.

State propagation follows the car-following chain

    dz/dt   = v_l - v_h
    dv_l/dt = a_l
    dv_h/dt = T_t / (r_w m_v) - F_r / m_v

integrated with a fixed step. Everything here is a pure function of
immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.interpolate import RegularGridInterpolator

N_GEARS = 10


class PowertrainFormatError(ValueError):
    """Raised when a powertrain data file is malformed."""


@dataclass(frozen=True)
class VehicleParams:
    """Constant vehicle parameters.

    The default drag coefficient (0.08) is small for a truck body; only the
    product ``rho * A_v * c_d`` enters the model, so it is kept as given.
    """

    m_v: float = 7000.0
    A_v: float = 7.71
    c_d: float = 0.08
    f_roll: float = 0.015
    rho: float = 1.2
    r_w: float = 0.498
    g: float = 9.81
    sensing_range: float = 350.0
    mass_range: tuple[float, float] = (5000.0, 10000.0)

    def __post_init__(self):
        for name in ("m_v", "A_v", "c_d", "f_roll", "rho", "r_w", "g", "sensing_range"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        lo, hi = self.mass_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad mass_range {self.mass_range}")


@dataclass(frozen=True)
class VehicleState:
    v_h: float
    v_l: float
    z: float
    n_g: int = 1
    a: float = 0.0
    theta: float = 0.0
    m_v: float = 7000.0
    in_range: bool = True

    @property
    def v_rel(self) -> float:
        """Lead minus ego velocity (positive when the gap opens)."""
        return self.v_l - self.v_h

    def replace(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass(frozen=True)
class EngineOperatingPoint:
    """Engine speed/torque before and after limit clamping.

    ``feasible`` is False when the raw engine speed lies outside the speed
    limits (launch below the crawl speed is exempt).
    """

    omega: float
    T_e: float
    omega_clamped: float
    T_e_clamped: float
    feasible: bool


def resistance_force(v_h: float, theta: float, params: VehicleParams, m_v: float | None = None) -> float:
    """Aerodynamic + rolling + grade resistance in N."""
    m = params.m_v if m_v is None else m_v
    aero = 0.5 * params.rho * params.A_v * params.c_d * v_h * v_h
    return aero + m * params.g * params.f_roll * math.cos(theta) + m * params.g * math.sin(theta)


def step(
    state: VehicleState,
    T_t: float,
    dn_g: int,
    a_l: float,
    dt: float,
    params: VehicleParams,
    scheme: str = "euler",
    n_gears: int = N_GEARS,
) -> VehicleState:
    """Advance the ego/lead pair by one control step.

    The gear change is applied first and clamped to ``[1, n_gears]``.
    ``scheme`` is ``"euler"`` (explicit) or ``"semi_implicit"`` (gap
    integrated with the updated velocities).
    """
    if not math.isfinite(T_t):
        raise ValueError(f"non-finite traction torque {T_t}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if dn_g not in (-1, 0, 1):
        raise ValueError(f"gear change must be -1, 0 or +1, got {dn_g}")

    n_g = min(max(state.n_g + dn_g, 1), n_gears)
    m = state.m_v
    F_r = resistance_force(state.v_h, state.theta, params, m)
    accel = T_t / (params.r_w * m) - F_r / m

    v_h = max(state.v_h + accel * dt, 0.0)
    v_l = max(state.v_l + a_l * dt, 0.0)
    if scheme == "euler":
        z = state.z + (state.v_l - state.v_h) * dt
    elif scheme == "semi_implicit":
        z = state.z + (v_l - v_h) * dt
    else:
        raise ValueError(f"unknown integration scheme {scheme!r}")

    return replace(
        state,
        v_h=v_h,
        v_l=v_l,
        z=z,
        n_g=n_g,
        a=(v_h - state.v_h) / dt,
        in_range=z <= params.sensing_range,
    )


@dataclass(frozen=True)
class FuelMap:
    """Fuel rate (g/s) on a regular (omega, torque) grid.

    Queries outside the grid are clamped to its edges.
    """

    omega: np.ndarray
    torque: np.ndarray
    rate: np.ndarray
    _interp: RegularGridInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        torque = np.asarray(self.torque, dtype=float)
        rate = np.asarray(self.rate, dtype=float)
        if omega.ndim != 1 or torque.ndim != 1 or len(omega) < 2 or len(torque) < 2:
            raise PowertrainFormatError("fuel map axes need at least two points each")
        if np.any(np.diff(omega) <= 0) or np.any(np.diff(torque) <= 0):
            raise PowertrainFormatError("fuel map axes must be strictly increasing")
        if rate.shape != (len(omega), len(torque)):
            raise PowertrainFormatError(
                f"fuel map grid has shape {rate.shape}, expected {(len(omega), len(torque))}"
            )
        if not np.all(np.isfinite(rate)) or np.any(rate < 0):
            raise PowertrainFormatError("fuel map values must be finite and nonnegative")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "torque", torque)
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "_interp", RegularGridInterpolator((omega, torque), rate))

    @property
    def max_rate(self) -> float:
        return float(self.rate.max())

    def __call__(self, omega, T_e):
        w = np.clip(omega, self.omega[0], self.omega[-1])
        t = np.clip(T_e, self.torque[0], self.torque[-1])
        if np.ndim(w) == 0 and np.ndim(t) == 0:
            return float(self._interp([[w, t]])[0])
        return self._interp(np.stack(np.broadcast_arrays(w, t), axis=-1))


@dataclass(frozen=True)
class Powertrain:
    """Transmission, engine envelope and fuel map.

    Negative (braking) wheel torque is delivered by the service brakes and
    bounded by ``max_brake_torque``; the engine then runs unloaded.
    """

    gear_ratios: tuple[float, ...]
    final_drive: float
    torque_curve_omega: tuple[float, ...]
    torque_curve_max: tuple[float, ...]
    speed_limits: tuple[float, float]
    fuel_map: FuelMap
    crawl_speed: float = 1.0
    max_brake_torque: float = 45000.0
    r_w: float = 0.498

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.gear_ratios)
        if len(ratios) != N_GEARS:
            raise PowertrainFormatError(f"expected {N_GEARS} gear ratios, got {len(ratios)}")
        if any(b >= a for a, b in zip(ratios, ratios[1:])) or ratios[-1] <= 0:
            raise PowertrainFormatError("gear ratios must be positive and strictly decreasing")
        if not self.final_drive > 0:
            raise PowertrainFormatError("final_drive must be positive")
        lo, hi = self.speed_limits
        if not 0 < lo < hi:
            raise PowertrainFormatError(f"bad engine speed limits {self.speed_limits}")
        if len(self.torque_curve_omega) != len(self.torque_curve_max) or len(self.torque_curve_omega) < 2:
            raise PowertrainFormatError("torque curve needs matching omega/torque lists (>= 2 points)")
        if any(b <= a for a, b in zip(self.torque_curve_omega, self.torque_curve_omega[1:])):
            raise PowertrainFormatError("torque curve omega must be strictly increasing")
        if min(self.torque_curve_max) < 0:
            raise PowertrainFormatError("torque curve must be nonnegative")
        object.__setattr__(self, "gear_ratios", ratios)

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "Powertrain":
        if data.get("format") != 1:
            raise PowertrainFormatError(f"unsupported powertrain format {data.get('format')!r}")
        try:
            curve = np.asarray(data["torque_curve"], dtype=float)
            fmap = data["fuel_map"]
            fuel = FuelMap(fmap["omega"], fmap["torque"], fmap["rate"])
            if curve.ndim != 2 or curve.shape[1] != 2:
                raise PowertrainFormatError("torque_curve must be a list of [omega, torque] pairs")
            return cls(
                gear_ratios=tuple(data["gear_ratios"]),
                final_drive=float(data["final_drive"]),
                torque_curve_omega=tuple(curve[:, 0]),
                torque_curve_max=tuple(curve[:, 1]),
                speed_limits=tuple(data["engine_speed_limits"]),
                fuel_map=fuel,
                **overrides,
            )
        except (KeyError, TypeError) as exc:
            raise PowertrainFormatError(f"malformed powertrain data: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "Powertrain":
        """Load a powertrain YAML file; ``None`` loads the shipped default."""
        if path is None:
            text = resources.files("ecoassist.data").joinpath("powertrain.yaml").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(yaml.safe_load(text), **overrides)

    def total_ratio(self, n_g: int) -> float:
        if not 1 <= n_g <= N_GEARS:
            raise ValueError(f"gear {n_g} out of range 1..{N_GEARS}")
        return self.gear_ratios[n_g - 1] * self.final_drive

    def max_engine_torque(self, omega: float) -> float:
        """Full-load torque; zero outside the speed limits."""
        lo, hi = self.speed_limits
        if omega < lo - 1e-9 or omega > hi + 1e-9:
            return 0.0
        return float(np.interp(omega, self.torque_curve_omega, self.torque_curve_max))

    def engine_speed(self, v_h: float, n_g: int) -> float:
        return v_h / self.r_w * self.total_ratio(n_g)

    def gear_feasible(self, v_h: float, n_g: int) -> bool:
        if v_h < self.crawl_speed:
            return n_g == 1
        lo, hi = self.speed_limits
        return lo <= self.engine_speed(v_h, n_g) <= hi

    def engine_state(self, v_h: float, T_t: float, n_g: int) -> EngineOperatingPoint:
        ratio = self.total_ratio(n_g)
        omega = v_h / self.r_w * ratio
        T_e = T_t / ratio
        lo, hi = self.speed_limits
        launching = v_h < self.crawl_speed
        feasible = launching or lo <= omega <= hi
        omega_c = min(max(omega, lo), hi)
        T_e_c = min(max(T_e, 0.0), self.max_engine_torque(omega_c))
        return EngineOperatingPoint(omega, T_e, omega_c, T_e_c, feasible)

    def fuel_rate(self, point: EngineOperatingPoint) -> float:
        """Fuel rate in g/s at the clamped operating point."""
        return self.fuel_map(point.omega_clamped, point.T_e_clamped)

    def power_reserve(self, point: EngineOperatingPoint) -> float:
        return power_reserve(point.omega_clamped, point.T_e_clamped, self.max_engine_torque(point.omega_clamped))

    def torque_limits(self, v_h: float, n_g: int) -> tuple[float, float]:
        """Admissible wheel torque range (brake limit, full load) in gear ``n_g``."""
        point = self.engine_state(v_h, 0.0, n_g)
        drive = self.max_engine_torque(point.omega_clamped) * self.total_ratio(n_g)
        return -self.max_brake_torque, drive

    def clamp_torque(self, v_h: float, T_t: float, n_g: int) -> float:
        lo, hi = self.torque_limits(v_h, n_g)
        return min(max(T_t, lo), hi)

    @property
    def max_wheel_torque(self) -> float:
        """Peak engine torque through the lowest gear."""
        return float(max(self.torque_curve_max) * self.total_ratio(1))


def power_reserve(omega: float, T_e: float, T_e_max: float) -> float:
    """Available power headroom ``(T_e_max - T_e) * omega`` in W, floored at 0."""
    return max(T_e_max - T_e, 0.0) * omega


def engine_state(v_h: float, T_t: float, n_g: int, powertrain: Powertrain) -> EngineOperatingPoint:
    return powertrain.engine_state(v_h, T_t, n_g)


def fuel_rate(point: EngineOperatingPoint, powertrain: Powertrain) -> float:
    return powertrain.fuel_rate(point)

"""Exponential control barrier function filter for the traction torque.

The barrier ``h = z - z0`` has relative degree two with respect to the
wheel torque. With feedback gains ``(k1, k2)`` the filter enforces

    h_ddot >= -k1 * h - k2 * h_dot

which, written out for the car-following model, is an upper bound on the
torque. Projection onto that half-line is a clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleParams, VehicleState


class UnstableGainsError(ValueError):
    """Raised for gain pairs whose closed-loop barrier dynamics are not Hurwitz."""


@dataclass(frozen=True)
class EcbfConfig:
    z0: float = 2.0
    k_alpha1: float = 0.8
    k_alpha2: float = 2.0
    margin: float = 0.0

    def __post_init__(self):
        if not self.z0 > 0:
            raise ValueError(f"z0 must be positive, got {self.z0}")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        verify_gains(self)

    @property
    def offset(self) -> float:
        """Effective barrier offset including the discretization margin."""
        return self.z0 + self.margin

    @property
    def closed_loop(self) -> np.ndarray:
        """``F - G K`` for the double-integrator chain."""
        return np.array([[0.0, 1.0], [-self.k_alpha1, -self.k_alpha2]])


@dataclass(frozen=True)
class BarrierState:
    h: float
    h_dot: float


def poles(k_alpha1: float, k_alpha2: float) -> tuple[complex, complex]:
    """Roots of ``s^2 + k2 s + k1``, ordered by real part (descending)."""
    disc = complex(k_alpha2 * k_alpha2 - 4.0 * k_alpha1)
    root = disc**0.5
    # numerically stable pairing: avoid cancellation in -b + sqrt(disc)
    if k_alpha2 >= 0:
        q = -0.5 * (k_alpha2 + root)
    else:
        q = -0.5 * (k_alpha2 - root)
    if q == 0:
        r1 = r2 = complex(0.0)
    else:
        r1, r2 = q, k_alpha1 / q
    return tuple(sorted((r1, r2), key=lambda c: (-c.real, -c.imag)))


def verify_gains(cfg: EcbfConfig) -> tuple[complex, complex]:
    p = poles(cfg.k_alpha1, cfg.k_alpha2)
    if not all(pi.real < 0 for pi in p):
        raise UnstableGainsError(
            f"gains k1={cfg.k_alpha1}, k2={cfg.k_alpha2} give poles {p}; both need negative real part"
        )
    return p


def barrier_state(state: VehicleState, cfg: EcbfConfig, sensing_range: float = 350.0) -> BarrierState:
    """``(z - z0, v_l - v_h)``; an undetected lead is placed at the sensing range, at rest relative to ego."""
    if not state.in_range:
        return BarrierState(sensing_range - cfg.offset, 0.0)
    return BarrierState(state.z - cfg.offset, state.v_l - state.v_h)


def max_safe_torque(
    state: VehicleState,
    a_l: float,
    F_r: float,
    cfg: EcbfConfig,
    params: VehicleParams,
) -> float:
    """Largest wheel torque satisfying the barrier inequality (may be negative)."""
    b = barrier_state(state, cfg, params.sensing_range)
    m = state.m_v
    return m * params.r_w * (a_l + F_r / m + cfg.k_alpha1 * b.h + cfg.k_alpha2 * b.h_dot)


def project(T_a: float, T_max: float) -> tuple[float, bool, float]:
    """Closest torque to ``T_a`` not exceeding ``T_max``.

    Returns ``(T_t, intervened, T_t - T_a)``. A proposal exactly at the
    bound is not counted as an intervention.
    """
    if not (math.isfinite(T_a) and math.isfinite(T_max)):
        raise ValueError("non-finite torque in projection")
    if T_a > T_max:
        return T_max, True, T_max - T_a
    return T_a, False, 0.0


def filter_torque(
    T_a: float,
    state: VehicleState,
    a_l: float,
    F_r: float,
    cfg: EcbfConfig,
    params: VehicleParams,
) -> tuple[float, bool, float, float]:
    """Project a proposal; also returns the bound used."""
    T_max = max_safe_torque(state, a_l, F_r, cfg, params)
    T_t, hit, delta = project(T_a, T_max)
    return T_t, hit, delta, T_max


def comparison_trajectory(eta0, cfg: EcbfConfig, times) -> np.ndarray:
    """Barrier lower envelope ``C exp((F - G K) t) eta0`` at each time."""
    from scipy.linalg import expm

    A = cfg.closed_loop
    eta0 = np.asarray(eta0, dtype=float)
    return np.array([(expm(A * t) @ eta0)[0] for t in np.atleast_1d(times)])

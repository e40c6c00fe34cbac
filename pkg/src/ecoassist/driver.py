"""Intelligent Driver Model with an attention threshold.

Sign convention: ``v_rel = v_l - v_h`` everywhere (negative while closing
in). The approach term is evaluated with the closing speed
``v_h - v_l = -v_rel`` so that approaching a slower leader *enlarges* the
desired gap, as in the standard IDM.

A distracted driver is emulated by dropping the approach term whenever the
gap is at or beyond ``attention_threshold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 1.5
    b: float = 2.0
    tau: float = 2.0
    v0: float = 20.0
    z0_idm: float = 2.0
    attention_threshold: float = 100.0
    b_emergency: float = 6.0

    def __post_init__(self):
        if min(self.a_max, self.b, self.tau, self.v0, self.b_emergency) <= 0:
            raise ValueError("a_max, b, tau, v0 and b_emergency must be positive")
        if self.z0_idm < 0:
            raise ValueError("z0_idm must be nonnegative")
        if self.attention_threshold <= self.z0_idm:
            raise ValueError("attention_threshold must exceed z0_idm")

    def replace(self, **changes) -> "IdmParams":
        return replace(self, **changes)


CONSCIENTIOUS = IdmParams(attention_threshold=100.0)
DISTRACTED = IdmParams(attention_threshold=50.0)


def approach_term(v: float, v_rel: float, params: IdmParams) -> float:
    """Dynamic gap contribution ``v_rel * v / (2 sqrt(a_max b))`` in m.

    Negative while closing in (``v_rel < 0``).
    """
    return v_rel * v / (2.0 * math.sqrt(params.a_max * params.b))


def desired_gap(v: float, v_rel: float, z: float, params: IdmParams) -> float:
    gap = params.z0_idm + params.tau * v
    if z < params.attention_threshold:
        # closing speed is -v_rel, hence the subtraction of a negative term
        gap -= approach_term(v, v_rel, params)
    return max(gap, params.z0_idm)


def idm_accel(v: float, v_rel: float, z: float, params: IdmParams) -> float:
    """Requested acceleration, clipped to ``[-b_emergency, a_max]``.

    ``z`` must be positive; a nonpositive gap is a collision and the caller
    is expected to end the episode instead of asking the driver.
    """
    if z <= 0:
        raise ValueError(f"gap {z} <= 0: collision, IDM undefined")
    if math.isinf(z):
        interaction = 0.0
    else:
        interaction = (desired_gap(v, v_rel, z, params) / z) ** 2
    a = params.a_max * (1.0 - (v / params.v0) ** 4 - interaction)
    return float(np.clip(a, -params.b_emergency, params.a_max))


def perturb(params: IdmParams, rng: np.random.Generator, spread: float = 0.2) -> IdmParams:
    """Scale ``a_max``, ``b`` and ``tau`` by independent factors in ``1 +/- spread``."""
    if spread <= 0:
        return params
    f = rng.uniform(1.0 - spread, 1.0 + spread, size=3)
    return params.replace(a_max=params.a_max * f[0], b=params.b * f[1], tau=params.tau * f[2])

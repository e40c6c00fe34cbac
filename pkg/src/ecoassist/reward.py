"""Multi-objective reward and the driver-adaptive power-reserve requirement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EXPONENT_CAP = 5.0


@dataclass(frozen=True)
class RewardWeights:
    w_a: float = 0.65
    w_f: float = 0.2
    w_T: float = 0.05
    w_g: float = 0.05
    w_pr: float = 0.05

    def __post_init__(self):
        if min(self.w_a, self.w_f, self.w_T, self.w_g, self.w_pr) < 0:
            raise ValueError("reward weights must be nonnegative")

    @property
    def total(self) -> float:
        return self.w_a + self.w_f + self.w_T + self.w_g + self.w_pr


@dataclass(frozen=True)
class NormConstants:
    a_des_max: float = 3.0
    m_f_max: float = 22.4
    T_t_max: float = 44100.0
    n_g_max: float = 1.0

    def __post_init__(self):
        if min(self.a_des_max, self.m_f_max, self.T_t_max, self.n_g_max) <= 0:
            raise ValueError("normalization constants must be positive")


@dataclass(frozen=True)
class LogisticParams:
    k1: float = 3.0
    k2: float = 3.0
    k3: float = 1.2

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.k3 > 1):
            raise ValueError(f"invalid logistic parameters {self}")


def _decay(x: float, cap: float) -> float:
    return 0.1 ** min(max(x, 0.0), cap)


def compute_reward(
    a: float,
    a_des: float,
    m_f_dot: float,
    dT_t: float,
    dn_g: int,
    P_res: float,
    P_res_req: float,
    w: RewardWeights,
    n: NormConstants,
    cap: float = EXPONENT_CAP,
) -> float:
    values = (a, a_des, m_f_dot, dT_t, dn_g, P_res, P_res_req)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite reward input {values}")
    r = (
        w.w_a * _decay(abs(a - a_des) / n.a_des_max, cap)
        + w.w_f * _decay(m_f_dot / n.m_f_max, cap)
        + w.w_T * _decay(abs(dT_t) / n.T_t_max, cap)
        + w.w_g * _decay(abs(dn_g) / n.n_g_max, cap)
    )
    if P_res >= P_res_req or P_res_req <= 0:
        r += w.w_pr
    else:
        r += w.w_pr * _decay((P_res_req - P_res) / P_res_req, cap)
    return r


def required_accel(v: float, p: LogisticParams) -> float:
    """Logistic acceleration potential ``k1 / (1 + k2 k3^-v)``."""
    return p.k1 / (1.0 + p.k2 * p.k3 ** (-v))


def required_power(m_v: float, v: float, p: LogisticParams) -> float:
    return m_v * v * required_accel(v, p)


@dataclass
class DemandHistogram:
    """Per-speed-bin reservoirs of requested accelerations.

    Bins are right-closed: a speed exactly on an interior edge goes to the
    lower bin (``(e_{i-1}, e_i]``); speed 0 goes to the first bin. Speeds
    beyond the last edge fall into the last bin.
    """

    edges: np.ndarray = field(default_factory=lambda: np.arange(0.0, 36.0, 1.0))
    capacity: int = 512
    confidence: float = 0.90
    seed: int = 0
    reservoirs: list[list[float]] = field(default=None)
    seen: list[int] = field(default=None)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if len(self.edges) < 2 or np.any(np.diff(self.edges) <= 0) or self.edges[0] != 0:
            raise ValueError("edges must start at 0 and increase strictly")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.reservoirs is None:
            self.reservoirs = [[] for _ in range(self.n_bins)]
        if self.seen is None:
            self.seen = [0] * self.n_bins
        self._rng = np.random.default_rng(self.seed)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def bin_of(self, v: float) -> int:
        i = int(np.searchsorted(self.edges, v, side="left")) - 1
        return min(max(i, 0), self.n_bins - 1)

    def record(self, v: float, a_des: float) -> None:
        """Reservoir-sample ``a_des`` into the bin of ``v`` (algorithm R)."""
        i = self.bin_of(v)
        self.seen[i] += 1
        res = self.reservoirs[i]
        if len(res) < self.capacity:
            res.append(float(a_des))
        else:
            j = int(self._rng.integers(self.seen[i]))
            if j < self.capacity:
                res[j] = float(a_des)

    def quantiles(self, min_samples: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Bin centers and nearest-rank quantiles for bins with enough samples."""
        centers, q = [], []
        for c, res in zip(self.centers, self.reservoirs):
            if len(res) >= min_samples:
                centers.append(c)
                q.append(nearest_rank(res, self.confidence))
        return np.array(centers), np.array(q)

    def state_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "capacity": self.capacity,
            "confidence": self.confidence,
            "reservoirs": [list(r) for r in self.reservoirs],
            "seen": list(self.seen),
            "rng": self._rng.bit_generator.state,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "DemandHistogram":
        hist = cls(
            edges=np.asarray(state["edges"]),
            capacity=state["capacity"],
            confidence=state["confidence"],
            reservoirs=[list(r) for r in state["reservoirs"]],
            seen=list(state["seen"]),
        )
        hist._rng.bit_generator.state = state["rng"]
        return hist


def record_demand(hist: DemandHistogram, v: float, a_des: float) -> DemandHistogram:
    hist.record(v, a_des)
    return hist


def nearest_rank(values, q: float) -> float:
    s = np.sort(np.asarray(values, dtype=float))
    k = max(int(math.ceil(q * len(s))), 1)
    return float(s[k - 1])


class InsufficientData(Exception):
    """Not enough populated speed bins to fit the logistic curve."""


def fit_logistic_points(
    v: np.ndarray,
    a: np.ndarray,
    init: LogisticParams,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> LogisticParams:
    """Damped Gauss-Newton fit of the logistic curve in log-parameter space.

    Parameters are ``(log k1, log k2, log(k3 - 1))`` which keeps ``k1, k2 > 0``
    and ``k3 > 1`` without constraints.
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    x = np.array([math.log(init.k1), math.log(init.k2), math.log(init.k3 - 1.0)])

    def model(x):
        k1, k2, k3 = math.exp(x[0]), math.exp(x[1]), 1.0 + math.exp(x[2])
        e = k3 ** (-v)
        d = 1.0 + k2 * e
        f = k1 / d
        # derivatives w.r.t. the log-parameters
        j1 = f
        j2 = -k1 * k2 * e / d**2
        j3 = k1 * k2 * e * v / (k3 * d**2) * (k3 - 1.0)
        return f, np.stack([j1, j2, j3], axis=1)

    lam = 1e-3
    f, J = model(x)
    r = a - f
    cost = float(r @ r)
    for _ in range(max_iter):
        g = J.T @ r
        H = J.T @ J
        step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
        if not np.all(np.isfinite(step)):
            break
        # bounds keep k2 > 0 and k3 > 1 representable in double precision
        x_new = np.clip(x + step, -20.0, 20.0)
        f_new, J_new = model(x_new)
        r_new = a - f_new
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            converged = cost - cost_new <= tol * max(cost, 1e-300) or np.max(np.abs(step)) < 1e-12
            x, f, J, r, cost = x_new, f_new, J_new, r_new, cost_new
            lam = max(lam / 10, 1e-12)
            if converged:
                break
        else:
            lam *= 10
            if lam > 1e12:
                break
    return LogisticParams(math.exp(x[0]), math.exp(x[1]), 1.0 + math.exp(x[2]))


def fit_logistic(
    hist: DemandHistogram,
    prior: LogisticParams,
    min_samples: int = 20,
    min_bins: int = 3,
) -> LogisticParams:
    """Fit the requirement curve to per-bin demand quantiles.

    Raises ``InsufficientData`` when fewer than ``min_bins`` bins hold
    ``min_samples`` samples; callers keep ``prior`` in that case.
    """
    centers, q = hist.quantiles(min_samples)
    if len(centers) < min_bins:
        raise InsufficientData(f"{len(centers)} usable bins, need {min_bins}")
    # the curve is positive; nonpositive quantiles carry no headroom information
    q = np.maximum(q, 1e-3)
    return fit_logistic_points(centers, q, prior)


def refit(hist: DemandHistogram, prior: LogisticParams, **kwargs) -> LogisticParams:
    try:
        return fit_logistic(hist, prior, **kwargs)
    except (InsufficientData, np.linalg.LinAlgError):
        return prior

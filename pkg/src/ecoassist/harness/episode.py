"""Closed-loop episode: driver -> controller -> safety filter -> vehicle -> reward."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import dynamics, reward as rw, safety
from ..agent import GEAR_CHANGES, MpoAgent, NotReady, ObservationSpec, ReplayBuffer, Transition
from ..driver import idm_accel
from .scenario import Scenario

TIE_RTOL = 1e-12
GALLON_L = 3.785411784
MILE_M = 1609.344
TRAJECTORY_COLUMNS = (
    "t", "v_l", "v_h", "z", "a_des", "a", "T_a", "T_t", "n_g", "r", "h", "fuel_rate", "intervened",
)


class SimulationError(RuntimeError):
    """Non-finite state; ``rows`` holds the last recorded steps."""

    def __init__(self, message: str, rows: list[dict]):
        super().__init__(message + "\n" + "\n".join(str(r) for r in rows))
        self.rows = rows


@dataclass(frozen=True)
class Environment:
    """Static configuration shared by all episodes."""

    vehicle: dynamics.VehicleParams = field(default_factory=dynamics.VehicleParams)
    powertrain: dynamics.Powertrain = field(default_factory=dynamics.Powertrain.load)
    ecbf: safety.EcbfConfig = field(default_factory=safety.EcbfConfig)
    weights: rw.RewardWeights = field(default_factory=rw.RewardWeights)
    norms: rw.NormConstants | None = None
    obs_spec: ObservationSpec = field(default_factory=ObservationSpec)
    dt: float = 0.1
    scheme: str = "euler"
    fit_every: int = 200
    fit_min_samples: int = 20
    fuel_density: float = 0.85  # kg/L
    lead_accel: str = "exact"  # or "estimate": backward difference of sensed lead speed

    def __post_init__(self):
        if self.norms is None:
            pt = self.powertrain
            object.__setattr__(
                self, "norms", rw.NormConstants(3.0, pt.fuel_map.max_rate, pt.max_wheel_torque, 1.0)
            )
        if self.lead_accel not in ("exact", "estimate"):
            raise ValueError(f"unknown lead_accel source {self.lead_accel!r}")


@dataclass
class DemandModel:
    """Driver-adaptive acceleration requirement, carried across episodes."""

    hist: rw.DemandHistogram = field(default_factory=rw.DemandHistogram)
    params: rw.LogisticParams = field(default_factory=rw.LogisticParams)
    steps: int = 0

    def observe(self, v: float, a_des: float, fit_every: int, min_samples: int) -> None:
        self.hist.record(v, a_des)
        self.steps += 1
        if fit_every and self.steps % fit_every == 0:
            self.params = rw.refit(self.hist, self.params, min_samples=min_samples)

    def state_dict(self) -> dict:
        return {"hist": self.hist.state_dict(), "params": asdict(self.params), "steps": self.steps}

    @classmethod
    def from_state_dict(cls, state: dict) -> "DemandModel":
        return cls(rw.DemandHistogram.from_state_dict(state["hist"]), rw.LogisticParams(**state["params"]), state["steps"])


@dataclass
class StepContext:
    state: dynamics.VehicleState
    a_des: float
    obs: np.ndarray
    gear_mask: np.ndarray
    env: Environment


@dataclass
class Proposal:
    T_a: float
    n_g: int
    act: object = None


def gear_mask(pt: dynamics.Powertrain, v_h: float, n_g: int) -> np.ndarray:
    """Admissible gear changes; never empty."""
    mask = np.array(
        [1 <= n_g + d <= dynamics.N_GEARS and pt.gear_feasible(v_h, n_g + d) for d in GEAR_CHANGES]
    )
    if not mask.any():
        if v_h >= pt.crawl_speed and pt.engine_speed(v_h, n_g) > pt.speed_limits[1] and n_g < dynamics.N_GEARS:
            mask[2] = True
        elif v_h >= pt.crawl_speed and pt.engine_speed(v_h, n_g) < pt.speed_limits[0] and n_g > 1:
            mask[0] = True
        else:
            mask[1] = True
    return mask


class BaselineController:
    """Resistance-compensating torque and exhaustive fuel-optimal gear choice.

    Gear feasibility is judged on engine speed only; each candidate is
    scored at the torque it can actually deliver, so under high demand the
    fuel-optimal gear may be unable to meet the request.
    """

    def __init__(self, env: Environment):
        self.env = env

    def control(self, a_des: float, state: dynamics.VehicleState) -> tuple[float, int]:
        env = self.env
        pt = env.powertrain
        F_r = dynamics.resistance_force(state.v_h, state.theta, env.vehicle, state.m_v)
        T = env.vehicle.r_w * (state.m_v * a_des + F_r)
        if state.v_h < pt.crawl_speed:
            return pt.clamp_torque(state.v_h, T, 1), 1
        best, best_fuel = None, math.inf
        for n in range(1, dynamics.N_GEARS + 1):
            if not pt.gear_feasible(state.v_h, n):
                continue
            fuel = pt.fuel_rate(pt.engine_state(state.v_h, pt.clamp_torque(state.v_h, T, n), n))
            # ties (to rounding) keep the lower gear
            if best is None or fuel < best_fuel - TIE_RTOL * abs(best_fuel):
                best, best_fuel = n, fuel
        if best is None:
            best = state.n_g
        return pt.clamp_torque(state.v_h, T, best), best

    def propose(self, ctx: StepContext) -> Proposal:
        T, n = self.control(ctx.a_des, ctx.state)
        return Proposal(T, n)


class AgentController:
    """Wraps an ``MpoAgent``; proposals are de-normalized to wheel torque."""

    def __init__(self, agent: MpoAgent, greedy: bool = False):
        self.agent = agent
        self.greedy = greedy

    def propose(self, ctx: StepContext) -> Proposal:
        res = self.agent.act(ctx.obs, ctx.gear_mask, greedy=self.greedy)
        T_a = res.u * ctx.env.obs_spec.torque_scale
        n = min(max(ctx.state.n_g + res.dn_g, 1), dynamics.N_GEARS)
        return Proposal(T_a, n, res)


class Learner:
    """Pushes transitions and runs ``updates_per_step`` learner steps every ``update_every`` pushes."""

    def __init__(self, agent: MpoAgent, buffer: ReplayBuffer, rng: np.random.Generator,
                 update_every: int = 1, min_replay: int = 1000, batch_size: int = 256):
        self.agent = agent
        self.buffer = buffer
        self.rng = rng
        self.update_every = update_every
        self.min_replay = min_replay
        self.batch_size = batch_size
        self.last_stats = None

    def observe(self, t: Transition, episode: int) -> None:
        self.buffer.push(t, episode)
        # cadence keyed to the buffer's push count so that it survives a resume
        if len(self.buffer) < self.min_replay or self.buffer.count % self.update_every:
            return
        try:
            batch = self.buffer.sample(self.batch_size, self.rng)
        except NotReady:
            return
        self.last_stats = self.agent.update(batch)


@dataclass
class EpisodeMetrics:
    mpg: float
    a_rms: float
    z_mean: float
    z_min: float
    collisions: int
    interventions: int
    mean_abs_delta: float
    episode_return: float
    fuel_g: float
    distance_m: float
    steps: int
    brake_saturations: int = 0

    def to_row(self) -> dict:
        return asdict(self)


def mpg(distance_m: float, fuel_g: float, density: float = 0.85) -> float:
    if fuel_g <= 0:
        return 0.0
    gallons = fuel_g / 1000.0 / density / GALLON_L
    return distance_m / MILE_M / gallons


def observation(state: dynamics.VehicleState, a_des: float, env: Environment) -> np.ndarray:
    """Raw observation ``(v_h, v_rel, a_des, a, z, n_g, m_v, theta, in_range)``.

    The radar reports nothing beyond its range: gap saturates at the range
    and relative speed reads 0.
    """
    zr = env.vehicle.sensing_range
    v_rel = state.v_rel if state.in_range else 0.0
    z = min(state.z, zr)
    raw = (state.v_h, v_rel, a_des, state.a, z, state.n_g, state.m_v, state.theta, float(state.in_range))
    return env.obs_spec.encode(raw)


def initial_state(scn: Scenario, env: Environment) -> dynamics.VehicleState:
    v0 = float(scn.cycle.v[0])
    n_g = 1
    if v0 >= env.powertrain.crawl_speed:
        feasible = [n for n in range(1, dynamics.N_GEARS + 1) if env.powertrain.gear_feasible(v0, n)]
        n_g = feasible[len(feasible) // 2] if feasible else 1
    return dynamics.VehicleState(
        v_h=v0, v_l=v0, z=scn.initial_gap, n_g=n_g, a=0.0, theta=float(scn.grade[0]),
        m_v=scn.mass, in_range=scn.initial_gap <= env.vehicle.sensing_range,
    )


def run_episode(
    scn: Scenario,
    controller,
    env: Environment,
    filter_on: bool = True,
    demand: DemandModel | None = None,
    learner: Learner | None = None,
    episode_id: int = 0,
    record: bool = True,
) -> tuple[EpisodeMetrics, list[dict]]:
    """Simulate one scenario to the end of its cycle or the first collision."""
    demand = demand if demand is not None else DemandModel()
    veh, pt = env.vehicle, env.powertrain
    dt = scn.cycle.dt
    lead_a = scn.cycle.lead_accel()
    state = initial_state(scn, env)
    a_des = idm_accel(state.v_h, state.v_rel, state.z, scn.driver)
    mask = gear_mask(pt, state.v_h, state.n_g)
    obs = observation(state, a_des, env)
    T_prev = 0.0
    v_l_prev = state.v_l

    rows: list[dict] = []
    recent: list[dict] = []
    ret = 0.0
    fuel_g = dist = 0.0
    sq_err = 0.0
    z_sum, z_min = state.z, state.z
    interventions, delta_sum, brake_sat, collisions = 0, 0.0, 0, 0
    n_steps = 0

    for k in range(len(scn.cycle) - 1):
        theta = float(scn.grade[k])
        state = state.replace(theta=theta)
        ctx = StepContext(state, a_des, obs, mask, env)
        prop = controller.propose(ctx)
        if not math.isfinite(prop.T_a):
            raise SimulationError(f"non-finite torque proposal at t={scn.cycle.t[k]}", recent)

        n_g = prop.n_g
        if state.v_h < pt.crawl_speed:
            n_g = 1
        dn_actual = n_g - state.n_g
        engaged = state.replace(n_g=n_g)

        a_l = float(lead_a[k])
        a_l_filter = a_l if env.lead_accel == "exact" else (state.v_l - v_l_prev) / dt
        F_r = dynamics.resistance_force(state.v_h, theta, veh, state.m_v)
        if filter_on:
            T_t, hit, delta, T_max = safety.filter_torque(prop.T_a, engaged, a_l_filter, F_r, env.ecbf, veh)
        else:
            T_t, hit, delta, T_max = prop.T_a, False, 0.0, math.inf
        T_exec = pt.clamp_torque(state.v_h, T_t, n_g)
        if T_exec > T_t:
            brake_sat += 1

        point = pt.engine_state(state.v_h, T_exec, n_g)
        fuel = pt.fuel_rate(point)
        p_res = pt.power_reserve(point)
        p_req = rw.required_power(state.m_v, state.v_h, demand.params)

        nxt = dynamics.step(engaged, T_exec, 0, a_l, dt, veh, env.scheme)
        r = rw.compute_reward(nxt.a, a_des, fuel, T_exec - T_prev, dn_actual, p_res, p_req, env.weights, env.norms)
        demand.observe(state.v_h, a_des, env.fit_every, env.fit_min_samples)

        collided = nxt.z <= 0
        a_des_next = idm_accel(nxt.v_h, nxt.v_rel, max(nxt.z, 1e-3), scn.driver)
        mask_next = gear_mask(pt, nxt.v_h, nxt.n_g)
        obs_next = observation(nxt, a_des_next, env)

        row = {
            "t": float(scn.cycle.t[k]), "v_l": state.v_l, "v_h": state.v_h, "z": state.z,
            "a_des": a_des, "a": nxt.a, "T_a": prop.T_a, "T_t": T_exec, "n_g": n_g, "r": r,
            "h": state.z - env.ecbf.offset, "fuel_rate": fuel, "intervened": int(hit),
        }
        recent.append(row)
        if len(recent) > 50:
            recent.pop(0)
        if not all(math.isfinite(v) for v in (nxt.v_h, nxt.z, nxt.a, r)):
            raise SimulationError(f"non-finite state at t={row['t']}", recent)
        if record:
            rows.append(row)

        if learner is not None and prop.act is not None:
            learner.observe(
                Transition(obs, prop.act.u, prop.act.gear, r, obs_next, collided, prop.act.logp_u,
                           prop.act.logp_gear, mask, mask_next, T_exec),
                episode_id,
            )

        n_steps += 1
        ret += r
        fuel_g += fuel * dt
        dist += state.v_h * dt
        sq_err += (nxt.a - a_des) ** 2
        z_sum += nxt.z
        z_min = min(z_min, nxt.z)
        if hit:
            interventions += 1
            delta_sum += abs(delta)

        v_l_prev = state.v_l
        state, a_des, obs, mask, T_prev = nxt, a_des_next, obs_next, mask_next, T_exec
        if collided:
            collisions = 1
            break

    metrics = EpisodeMetrics(
        mpg=mpg(dist, fuel_g, env.fuel_density),
        a_rms=math.sqrt(sq_err / max(n_steps, 1)),
        z_mean=z_sum / (n_steps + 1),
        z_min=max(z_min, 0.0),
        collisions=collisions,
        interventions=interventions,
        mean_abs_delta=delta_sum / interventions if interventions else 0.0,
        episode_return=ret,
        fuel_g=fuel_g,
        distance_m=dist,
        steps=n_steps,
        brake_saturations=brake_sat,
    )
    return metrics, rows

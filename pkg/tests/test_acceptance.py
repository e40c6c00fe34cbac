"""Acceptance criteria, one test each; the summary prints a PASS/FAIL line per criterion."""

import dataclasses
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy.integrate import solve_ivp

from ecoassist import safety
from ecoassist.agent import Critic, HybridPolicy, MpoAgent
from ecoassist.agent.networks import categorical_logprob, gaussian_logprob
from ecoassist.config import ScenarioConfig, load_config
from ecoassist.dynamics import VehicleParams, VehicleState, resistance_force
from ecoassist.harness.episode import BaselineController, run_episode
from ecoassist.harness.training import (
    build_environment, build_scenario, evaluate, evaluate_controllers, initial_train_state, train,
)
from ecoassist.reward import LogisticParams, fit_logistic_points

from conftest import tiny_config
from oracles import dp_q_values, ecbf_constraint, logistic, qp_bisection, roots_quadratic
from test_agent import _fd_check, _frozen
from test_retrace import _rollout, _targets_from_critic

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
P = VehicleParams()
CFG = safety.EcbfConfig()


@pytest.mark.criterion("Safety: filter on, distracted driver, 200 training + 50 evaluation episodes")
def test_safety_training_and_evaluation(tmp_path, record_property):
    cfg = load_config(CONFIGS / "safety.yaml")
    z0 = cfg.ecbf.offset
    t0 = time.time()
    st = train(cfg, tmp_path)
    rows = [r for r in evaluate_controllers(cfg, st.agent, st.demand, include_baseline=False)]
    elapsed = time.time() - t0
    assert len(st.curve) >= 200 and len(rows) >= 50
    train_z = min(r["z_min"] for r in st.curve)
    eval_z = min(r["z_min"] for r in rows)
    collisions = sum(r["collisions"] for r in st.curve) + sum(r["collisions"] for r in rows)
    record_property("detail", f"{len(st.curve)}+{len(rows)} episodes, collisions={collisions}, "
                              f"min z - z0 = {min(train_z, eval_z) - z0:.3g} m, "
                              f"interventions={sum(r['interventions'] for r in st.curve)}, {elapsed:.0f} s")
    assert collisions == 0
    assert min(train_z, eval_z) >= z0 - 1e-6


@pytest.mark.criterion("Collision reproduction: same scenario, filter off, baseline control")
def test_collision_reproduction(record_property):
    cfg = load_config(CONFIGS / "safety.yaml")
    env = build_environment(cfg)
    scn = build_scenario(cfg, ScenarioConfig(cycle="distracted_check", driver="distracted", v0=27.0))
    m, rows = run_episode(scn, BaselineController(env), env, filter_on=False)
    record_property("detail", f"collisions={m.collisions} at t={rows[-1]['t']:.1f} s")
    assert m.collisions >= 1


@pytest.mark.criterion("QP oracle: closed-form projection vs iterative solver, 1e4 instances, 1e-9 rel")
def test_qp_oracle(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    active = 0
    for _ in range(10_000):
        m = rng.uniform(5000, 10000)
        h, hd = rng.uniform(0, 200), rng.uniform(-25, 10)
        v_h = rng.uniform(0, 30)
        F_r = resistance_force(v_h, rng.uniform(-0.04, 0.04), P, m)
        a_l = rng.uniform(-6, 3)
        T_a = rng.uniform(-60000, 60000)
        s = VehicleState(v_h=v_h, v_l=v_h + hd, z=h + CFG.offset, m_v=m)
        T, hit, _, _ = safety.filter_torque(T_a, s, a_l, F_r, CFG, P)
        A, b = ecbf_constraint(m, P.r_w, a_l, F_r, h, hd, CFG.k_alpha1, CFG.k_alpha2)
        ref = qp_bisection(T_a, A, b)
        worst = max(worst, abs(T - ref) / max(abs(ref), 1.0))
        active += hit
    record_property("detail", f"max rel err {worst:.2e}, {active} active constraints")
    assert worst <= 1e-9


@pytest.mark.criterion("Gain verification: poles of [0.8, 2] to 1e-12, [-1, 2] rejected")
def test_gain_verification(record_property):
    p = sorted(x.real for x in safety.verify_gains(CFG))
    ref = roots_quadratic(0.8, 2.0)
    assert p == pytest.approx(ref, abs=1e-12)
    assert p == pytest.approx([-1.4472, -0.5528], abs=5e-5)
    with pytest.raises(safety.UnstableGainsError):
        safety.EcbfConfig(k_alpha1=-1.0, k_alpha2=2.0)
    record_property("detail", f"poles {p[1]:.12f}, {p[0]:.12f}")


@pytest.mark.criterion("Forward invariance: h(t) above the comparison envelope, 60 s, 20 initial conditions")
def test_forward_invariance(record_property):
    rng = np.random.default_rng(7)
    t_eval = np.arange(0.0, 60.0 + 1e-9, 0.05)
    worst = math.inf
    for _ in range(20):
        m = rng.uniform(5000, 10000)
        a_l = rng.uniform(0.0, 1.0)  # constant, keeps the lead speed nonnegative
        v_l0 = rng.uniform(0, 25)
        v_h0 = rng.uniform(0, 30)
        h0 = rng.uniform(0.5, 150)
        eta0 = np.array([h0, v_l0 - v_h0])
        # keep the start inside the invariant set C e^{At} eta0 >= 0 is not required:
        # the bound is a lower envelope regardless of its sign
        T_a = rng.uniform(5000, 60000)  # aggressive proposals

        def rhs(t, x):
            v_h, v_l, z = x
            s = VehicleState(v_h=v_h, v_l=v_l, z=z, m_v=m)
            F_r = resistance_force(v_h, 0.0, P, m)
            T, *_ = safety.filter_torque(T_a, s, a_l, F_r, CFG, P)
            a_h = (T / P.r_w - F_r) / m
            return [a_h, a_l, v_l - v_h]

        sol = solve_ivp(rhs, (0.0, 60.0), [v_h0, v_l0, h0 + CFG.offset], t_eval=t_eval,
                        rtol=1e-10, atol=1e-10, max_step=0.05)
        assert sol.success
        h = sol.y[2] - CFG.offset
        env = safety.comparison_trajectory(eta0, CFG, t_eval)
        worst = min(worst, float(np.min(h - env)))
    record_property("detail", f"min over runs of h - envelope = {worst:.3g}")
    assert worst >= -1e-6


@pytest.mark.criterion("Retrace/DP equivalence: 3-state deterministic MDP, on-policy, lambda=1, 1e-10")
def test_retrace_dp(record_property):
    P_ = np.array([[1, 2], [2, 0], [-1, 1]])
    R = np.array([[1.0, -0.5], [0.25, 2.0], [3.0, 1.5]])
    worst = 0.0
    # deterministic policy: targets equal DP Q from an arbitrary critic
    pi = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    Q = dp_q_values(P_, R, pi, 0.99)
    rows = _rollout(P_, R, [0, 0, 0], 0, 15)
    out = _targets_from_critic(rows, np.random.default_rng(0).normal(size=(3, 2)), pi, 0.99).numpy()
    worst = max(worst, float(np.max(np.abs(out - [Q[s, a] for s, a, _, _ in rows]))))
    # stochastic policy: DP Q is the fixed point of the on-policy recursion
    pi = np.array([[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]])
    P_ = np.array([[1, 2], [2, 0], [0, 1]])
    Q = dp_q_values(P_, R, pi, 0.99, iters=200_000)
    rng = np.random.default_rng(1)
    s, rows = 0, []
    for _ in range(15):
        a = int(rng.choice(2, p=pi[s]))
        rows.append((s, a, R[s, a], P_[s, a]))
        s = P_[s, a]
    out = _targets_from_critic(rows, Q, pi, 0.99).numpy()
    worst = max(worst, float(np.max(np.abs(out - [Q[s, a] for s, a, _, _ in rows]))))
    record_property("detail", f"max abs err {worst:.1e}")
    assert worst <= 1e-10


@pytest.mark.criterion("MPO constraint satisfaction: per-factor KL <= {0.1, 0.001, 0.1} x 1.1")
def test_mpo_kl_constraints(record_property):
    torch.set_num_threads(1)
    hp = tiny_config().agent
    ag = MpoAgent(9, hp, seed=0)
    obs, mask, u, g, w = _frozen(ag)
    for _ in range(2500):
        ag.m_step(obs, mask, u, g, w)
    kls = ag.measure_kls(obs, mask)
    record_property("detail", "KL mu/sigma/d = " + ", ".join(f"{k:.4g}" for k in kls))
    for kl, eps in zip(kls, (hp.eps_mu, hp.eps_sigma, hp.eps_d)):
        assert kl <= eps * 1.1


@pytest.mark.criterion("Gradient checks: 2x4 networks, 10 seeds, 1e-4 relative")
def test_gradient_checks(record_property):
    for seed in range(10):
        torch.manual_seed(seed)
        pol = HybridPolicy(9, (4, 4)).double()
        crit = Critic(9, (4, 4)).double()
        gen = torch.Generator().manual_seed(seed)
        obs = torch.randn(5, 9, generator=gen, dtype=torch.float64)
        u = torch.randn(5, generator=gen, dtype=torch.float64)
        gear = torch.tensor([0, 1, 2, 1, 0])
        target = torch.randn(5, generator=gen, dtype=torch.float64)

        def pol_loss():
            mean, std, logits = pol(obs)
            return -(gaussian_logprob(u, mean, std) + categorical_logprob(gear, logits)).sum()

        _fd_check(pol, pol_loss)
        _fd_check(crit, lambda: 0.5 * ((crit(obs, u, gear) - target) ** 2).mean())
    record_property("detail", "policy and critic, every parameter entry")


@pytest.mark.criterion("Logistic-fit recovery: noiseless 1e-4 rel; 5% noise k1 within 10% over 20 seeds")
def test_logistic_recovery(record_property):
    v = np.arange(0.5, 30.0, 1.0)
    clean = logistic(v, 2.0, 3.0, 1.2)
    p = fit_logistic_points(v, clean, LogisticParams())
    errs = [abs(p.k1 - 2.0) / 2.0, abs(p.k2 - 3.0) / 3.0, abs(p.k3 - 1.2) / 1.2]
    assert max(errs) <= 1e-4
    k1s = []
    for seed in range(20):
        noisy = clean * (1 + 0.05 * np.random.default_rng(seed).standard_normal(len(v)))
        k1s.append(fit_logistic_points(v, noisy, LogisticParams()).k1)
    worst = max(abs(k - 2.0) / 2.0 for k in k1s)
    record_property("detail", f"noiseless max rel err {max(errs):.1e}; noisy worst k1 err {100 * worst:.1f}%")
    assert worst <= 0.10


@pytest.mark.criterion("Directional learning: >= 500 episodes at 2x32, held-out 5-seed medians")
def test_directional_learning(tmp_path, record_property):
    cfg = load_config(CONFIGS / "desk.yaml")
    assert cfg.training.episodes >= 500 and cfg.agent.hidden == (32, 32)
    assert len(cfg.evaluation.seeds) == 5
    env = build_environment(cfg)
    t0 = time.time()
    untrained = initial_train_state(cfg, env.obs_spec.dim)
    st = train(cfg, tmp_path)
    elapsed = time.time() - t0
    before = evaluate_controllers(cfg, untrained.agent, untrained.demand)
    after = evaluate_controllers(cfg, st.agent, st.demand, include_baseline=False)

    def med(rows, ctrl, key):
        return statistics.median(r[key] for r in rows if r["controller"] == ctrl)

    ret0, ret1 = med(before, "agent", "episode_return"), med(after, "agent", "episode_return")
    mpg0, mpg1 = med(before, "agent", "mpg"), med(after, "agent", "mpg")
    arms_agent, arms_base = med(after, "agent", "a_rms"), med(before, "baseline", "a_rms")
    record_property("detail", f"return {ret0:.1f} -> {ret1:.1f}; MPG {mpg0:.3f} -> {mpg1:.3f} "
                              f"(baseline {med(before, 'baseline', 'mpg'):.3f}); a_rms assisted {arms_agent:.3f} "
                              f"vs baseline {arms_base:.3f}; {len(st.curve)} episodes in {elapsed / 60:.1f} min")
    assert ret1 > ret0
    assert mpg1 > mpg0
    assert arms_agent < arms_base


@pytest.mark.criterion("Determinism: checkpoint resume and fixed-seed evaluation are byte-identical")
def test_determinism(tmp_path, record_property):
    cfg = tiny_config(episodes=4)
    full, part = tmp_path / "full", tmp_path / "part"
    train(cfg, full)
    train(cfg, part, episodes=2)
    train(cfg, part, resume=part / "ckpt_000002.pt")
    same_curve = (full / "curve.csv").read_bytes() == (part / "curve.csv").read_bytes()
    evaluate(full / "ckpt_000004.pt", cfg, tmp_path / "e1")
    evaluate(part / "ckpt_000004.pt", cfg, tmp_path / "e2")
    names = ("metrics.csv", "table.csv", "table.txt")
    same_eval = all((tmp_path / "e1" / n).read_bytes() == (tmp_path / "e2" / n).read_bytes() for n in names)
    record_property("detail", f"curve identical={same_curve}, evaluation CSVs identical={same_eval}")
    assert same_curve and same_eval

"""MPO learner for the hybrid torque / gear-change action.

One ``update`` call performs policy evaluation (Retrace targets and a
critic step) followed by policy improvement: a non-parametric E-step that
reweights sampled actions by ``exp(Q / eta)`` and an M-step that fits the
parametric policy under decoupled KL trust regions (Gaussian mean,
Gaussian std, categorical).
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.optimize import minimize

from .networks import (
    GEAR_CHANGES,
    Critic,
    HybridPolicy,
    categorical_kl,
    categorical_logprob,
    gaussian_kl,
    gaussian_logprob,
)
from .retrace import retrace


@dataclass(frozen=True)
class MpoHyperparams:
    actor_lr: float = 1e-5
    critic_lr: float = 1e-5
    dual_constraint: float = 0.1
    retrace_steps: int = 15
    eps_mu: float = 0.1
    eps_sigma: float = 0.001
    eps_d: float = 0.1
    alpha_d: float = 10.0
    alpha_c: float = 10.0
    gamma: float = 0.99
    retrace_lambda: float = 1.0
    batch_size: int = 256
    action_samples: int = 20
    value_samples: int = 8
    polyak: float = 5e-3
    multiplier_lr: float = 0.1
    init_eta: float = 1.0
    init_std: float = 0.3
    hidden: tuple[int, ...] = (256, 256, 256)
    replay_capacity: int = 1_000_000
    min_replay: int = 1000
    update_every: int = 1

    def __post_init__(self):
        positive = (
            "actor_lr critic_lr dual_constraint retrace_steps alpha_d alpha_c batch_size "
            "action_samples value_samples polyak multiplier_lr init_eta init_std"
        ).split()
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("eps_mu", "eps_sigma", "eps_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.action_samples < 2:
            raise ValueError("the E-step needs at least two sampled actions per state")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _as_tensor(x, dtype=torch.float32):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def dual_function(eta: float, q: np.ndarray, eps: float) -> tuple[float, float]:
    """E-step dual ``eta*eps + eta*mean_s log mean_i exp(Q_is/eta)`` and its derivative.

    ``q`` has shape ``(n_samples, n_states)``.
    """
    n = q.shape[0]
    q_max = q.max(axis=0)
    z = (q - q_max) / eta
    lse = np.log(np.exp(z).sum(axis=0)) + q_max / eta - math.log(n)
    w = np.exp(z - np.log(np.exp(z).sum(axis=0)))
    g = eta * eps + eta * lse.mean()
    dg = eps + lse.mean() - ((w * q).sum(axis=0) / eta).mean()
    return float(g), float(dg)


def solve_temperature(q: np.ndarray, eps: float, eta0: float) -> float | None:
    """Minimize the dual over ``eta > 0``; ``None`` on failure."""
    def fun(x):
        g, dg = dual_function(float(x[0]), q, eps)
        return g, np.array([dg])

    try:
        res = minimize(fun, np.array([max(eta0, 1e-6)]), jac=True, method="L-BFGS-B", bounds=[(1e-6, 1e6)])
    except (FloatingPointError, ValueError):
        return None
    eta = float(res.x[0])
    if not math.isfinite(eta) or not math.isfinite(res.fun):
        return None
    return eta


def estep_weights(q: np.ndarray, eta: float) -> np.ndarray:
    """Per-state softmax of ``Q / eta`` over samples (axis 0)."""
    z = q / eta
    z = z - z.max(axis=0, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=0, keepdims=True)


def estep_kl(weights: np.ndarray) -> np.ndarray:
    """Sample estimate of KL(q || pi) per state when actions were drawn from pi."""
    n = weights.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(weights > 0, weights * np.log(n * weights), 0.0)
    return terms.sum(axis=0)


@dataclass
class ActResult:
    u: float
    gear: int
    logp_u: float
    logp_gear: float

    @property
    def dn_g(self) -> int:
        return GEAR_CHANGES[self.gear]


@dataclass
class UpdateStats:
    critic_loss: float = float("nan")
    eta: float = float("nan")
    estep_kl: float = float("nan")
    kl_mu: float = float("nan")
    kl_sigma: float = float("nan")
    kl_d: float = float("nan")
    alphas: tuple = field(default_factory=tuple)


class MpoAgent:
    """Actor, critic, their targets, optimizers and Lagrange multipliers."""

    def __init__(self, obs_dim: int, hp: MpoHyperparams = MpoHyperparams(), seed: int = 0, dtype=torch.float32):
        self.obs_dim = obs_dim
        self.hp = hp
        self.dtype = dtype
        torch.manual_seed(seed)
        self.policy = HybridPolicy(obs_dim, hp.hidden, init_std=hp.init_std).to(dtype)
        self.critic = Critic(obs_dim, hp.hidden).to(dtype)
        self.target_policy = copy.deepcopy(self.policy)
        self.target_critic = copy.deepcopy(self.critic)
        for p in (*self.target_policy.parameters(), *self.target_critic.parameters()):
            p.requires_grad_(False)
        self.actor_opt = torch.optim.Adam(self.policy.parameters(), lr=hp.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=hp.critic_lr)
        self.eta = hp.init_eta
        self.log_alpha = {
            "mu": math.log(hp.alpha_c),
            "sigma": math.log(hp.alpha_c),
            "d": math.log(hp.alpha_d),
        }
        self.gen = torch.Generator().manual_seed(seed)
        self.updates = 0

    # ------------------------------------------------------------------ acting
    def _tensor(self, x):
        return _as_tensor(x, self.dtype)

    @torch.no_grad()
    def act(self, obs, gear_mask, greedy: bool = False) -> ActResult:
        """Sample (or take the mode of) the hybrid action for one observation."""
        o = self._tensor(obs).unsqueeze(0)
        m = torch.as_tensor(np.asarray(gear_mask, dtype=bool)).unsqueeze(0)
        mean, std, logits = self.policy(o, m)
        if greedy:
            u = mean
            gear = torch.argmax(logits, dim=-1)
        else:
            u = mean + std * torch.randn(mean.shape, generator=self.gen, dtype=self.dtype)
            gear = torch.multinomial(torch.softmax(logits, dim=-1), 1, generator=self.gen).squeeze(-1)
        logp_u = gaussian_logprob(u, mean, std)
        logp_g = categorical_logprob(gear, logits)
        return ActResult(float(u[0]), int(gear[0]), float(logp_u[0]), float(logp_g[0]))

    # -------------------------------------------------------------- evaluation
    def _sample_actions(self, policy, obs, mask, n: int):
        """Draw ``n`` actions per state; returns tensors of shape ``(n, S)``."""
        with torch.no_grad():
            mean, std, logits = policy(obs, mask)
            eps = torch.randn((n, *mean.shape), generator=self.gen, dtype=self.dtype)
            u = mean.unsqueeze(0) + std.unsqueeze(0) * eps
            probs = torch.softmax(logits, dim=-1)
            flat = probs.reshape(-1, probs.shape[-1])
            g = torch.multinomial(flat, n, replacement=True, generator=self.gen).T
            g = g.reshape(n, *mean.shape)
        return u, g

    @torch.no_grad()
    def expected_q(self, obs: torch.Tensor, mask: torch.Tensor, n: int | None = None) -> torch.Tensor:
        """``E_pi Q_target(s, .)``: Monte Carlo over torque, exact sum over gear changes."""
        n = n or self.hp.value_samples
        mean, std, logits = self.target_policy(obs, mask)
        probs = torch.softmax(logits, dim=-1)
        eps = torch.randn((n, *mean.shape), generator=self.gen, dtype=self.dtype)
        u = mean.unsqueeze(0) + std.unsqueeze(0) * eps
        total = torch.zeros_like(mean)
        for k in range(len(GEAR_CHANGES)):
            g = torch.full(u.shape, k, dtype=torch.long)
            q = self.target_critic(obs.unsqueeze(0).expand(n, *obs.shape), u, g).mean(0)
            total = total + probs[..., k] * q
        return total

    @torch.no_grad()
    def retrace_targets(self, batch: dict) -> torch.Tensor:
        obs = self._tensor(batch["obs"])
        nxt = self._tensor(batch["next_obs"])
        u = self._tensor(batch["u"])
        gear = torch.as_tensor(batch["gear"], dtype=torch.long)
        mask = torch.as_tensor(batch["gear_mask"])
        next_mask = torch.as_tensor(batch["next_gear_mask"])
        q_taken = self.target_critic(obs, u, gear)
        v_next = self.expected_q(nxt, next_mask)
        mean, std, logits = self.target_policy(obs, mask)
        logp = gaussian_logprob(u, mean, std) + categorical_logprob(gear, logits)
        log_ratio = logp - self._tensor(batch["logp_u"]) - self._tensor(batch["logp_gear"])
        return retrace(
            self._tensor(batch["reward"]),
            torch.as_tensor(batch["done"]),
            q_taken,
            v_next,
            log_ratio,
            self.hp.gamma,
            self.hp.retrace_lambda,
        )

    def critic_update(self, batch: dict, targets: torch.Tensor) -> float:
        """One Adam step on the squared error to ``targets``; skipped if the loss is not finite."""
        obs = self._tensor(batch["obs"])
        q = self.critic(obs, self._tensor(batch["u"]), torch.as_tensor(batch["gear"], dtype=torch.long))
        loss = 0.5 * ((q - targets.detach()) ** 2).mean()
        if not torch.isfinite(loss):
            return float("nan")
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        return float(loss.detach())

    # ------------------------------------------------------ policy improvement
    def e_step(self, obs: torch.Tensor, mask: torch.Tensor, q_fn=None):
        """Sample actions from the target policy and weight them by ``exp(Q/eta)``.

        Returns ``(u, gear, weights, eta, mean KL(q||pi))``; tensors have shape
        ``(n_samples, n_states)``.
        """
        n = self.hp.action_samples
        u, g = self._sample_actions(self.target_policy, obs, mask, n)
        with torch.no_grad():
            if q_fn is None:
                q = self.target_critic(obs.unsqueeze(0).expand(n, *obs.shape), u, g)
            else:
                q = q_fn(u, g)
        q_np = q.reshape(n, -1).double().numpy()
        eta = solve_temperature(q_np, self.hp.dual_constraint, self.eta)
        if eta is not None:
            self.eta = eta
        w = estep_weights(q_np, self.eta)
        kl = float(estep_kl(w).mean())
        weights = torch.as_tensor(w, dtype=self.dtype).reshape(q.shape)
        return u, g, weights, self.eta, kl

    def policy_losses(self, obs, mask, u, g, weights):
        """Weighted log-likelihood terms and per-factor KL(target || online)."""
        mean, std, logits = self.policy(obs, mask)
        with torch.no_grad():
            mean_t, std_t, logits_t = self.target_policy(obs, mask)
        ll_mu = (weights * gaussian_logprob(u, mean.unsqueeze(0), std_t.unsqueeze(0))).sum(0).mean()
        ll_sigma = (weights * gaussian_logprob(u, mean_t.unsqueeze(0), std.unsqueeze(0))).sum(0).mean()
        ll_d = (weights * categorical_logprob(g, logits.unsqueeze(0).expand(g.shape[0], *logits.shape))).sum(0).mean()
        kl_mu = gaussian_kl(mean_t, std_t, mean, std_t).mean()
        kl_sigma = gaussian_kl(mean_t, std_t, mean_t, std).mean()
        kl_d = categorical_kl(logits_t, logits).mean()
        return (ll_mu, ll_sigma, ll_d), (kl_mu, kl_sigma, kl_d)

    def m_step(self, obs, mask, u, g, weights) -> tuple[float, float, float]:
        """One Lagrangian step of the decoupled, KL-regularized weighted fit.

        A factor whose trust-region size is 0 is frozen (hard constraint).
        Returns the per-factor KLs measured before the step.
        """
        hp = self.hp
        (ll_mu, ll_sigma, ll_d), kls = self.policy_losses(obs, mask, u, g, weights)
        eps = {"mu": hp.eps_mu, "sigma": hp.eps_sigma, "d": hp.eps_d}
        terms = {"mu": (ll_mu, kls[0]), "sigma": (ll_sigma, kls[1]), "d": (ll_d, kls[2])}
        loss = torch.zeros((), dtype=self.dtype)
        for key, (ll, kl) in terms.items():
            if eps[key] > 0:
                loss = loss - ll + math.exp(self.log_alpha[key]) * kl
        if not torch.isfinite(loss):
            return tuple(float("nan") for _ in kls)
        self.actor_opt.zero_grad()
        if loss.requires_grad:
            loss.backward()
            self.actor_opt.step()
        for key, (_, kl) in terms.items():
            if eps[key] > 0:
                # multiplicative ascent on the relative violation
                step = hp.multiplier_lr * (float(kl.detach()) - eps[key]) / eps[key]
                self.log_alpha[key] = float(np.clip(self.log_alpha[key] + np.clip(step, -1.0, 1.0), -12.0, 12.0))
        return tuple(float(k.detach()) for k in kls)

    def measure_kls(self, obs, mask) -> tuple[float, float, float]:
        with torch.no_grad():
            mean, std, logits = self.policy(obs, mask)
            mean_t, std_t, logits_t = self.target_policy(obs, mask)
            return (
                float(gaussian_kl(mean_t, std_t, mean, std_t).mean()),
                float(gaussian_kl(mean_t, std_t, mean_t, std).mean()),
                float(categorical_kl(logits_t, logits).mean()),
            )

    def soft_update_targets(self) -> None:
        tau = self.hp.polyak
        with torch.no_grad():
            for net, tgt in ((self.policy, self.target_policy), (self.critic, self.target_critic)):
                for p, tp in zip(net.parameters(), tgt.parameters()):
                    tp.mul_(1.0 - tau).add_(p, alpha=tau)

    def update(self, batch: dict) -> UpdateStats:
        """Full learner step on a batch of windows (arrays shaped ``(B, L, ...)``)."""
        targets = self.retrace_targets(batch)
        closs = self.critic_update(batch, targets)
        obs = self._tensor(batch["obs"]).reshape(-1, self.obs_dim)
        mask = torch.as_tensor(batch["gear_mask"]).reshape(-1, len(GEAR_CHANGES))
        u, g, w, eta, kl_q = self.e_step(obs, mask)
        kls = self.m_step(obs, mask, u, g, w)
        self.soft_update_targets()
        self.updates += 1
        return UpdateStats(closs, eta, kl_q, *kls, alphas=tuple(math.exp(v) for v in self.log_alpha.values()))

    # ------------------------------------------------------------ persistence
    def state_dict(self) -> dict:
        return {
            "hp": self.hp.to_dict(),
            "obs_dim": self.obs_dim,
            "policy": self.policy.state_dict(),
            "critic": self.critic.state_dict(),
            "target_policy": self.target_policy.state_dict(),
            "target_critic": self.target_critic.state_dict(),
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "eta": self.eta,
            "log_alpha": dict(self.log_alpha),
            "gen": self.gen.get_state(),
            "updates": self.updates,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "MpoAgent":
        hp = MpoHyperparams(**{**state["hp"], "hidden": tuple(state["hp"]["hidden"])})
        agent = cls(state["obs_dim"], hp)
        agent.policy.load_state_dict(state["policy"])
        agent.critic.load_state_dict(state["critic"])
        agent.target_policy.load_state_dict(state["target_policy"])
        agent.target_critic.load_state_dict(state["target_critic"])
        agent.actor_opt.load_state_dict(state["actor_opt"])
        agent.critic_opt.load_state_dict(state["critic_opt"])
        agent.eta = state["eta"]
        agent.log_alpha = dict(state["log_alpha"])
        agent.gen.set_state(state["gen"])
        agent.updates = state["updates"]
        return agent

"""Retrace(lambda) value targets over fixed-length trajectory windows."""

from __future__ import annotations

import numpy as np
import torch


class NonContiguousTrajectory(ValueError):
    pass


def check_contiguous(obs: np.ndarray, next_obs: np.ndarray, done=None, atol: float = 0.0) -> None:
    """Each ``next_obs[t]`` must equal ``obs[t + 1]`` and no terminal may occur before the last step."""
    obs = np.asarray(obs)
    next_obs = np.asarray(next_obs)
    if len(obs) > 1 and not np.allclose(next_obs[:-1], obs[1:], rtol=0.0, atol=atol):
        raise NonContiguousTrajectory("next observation does not match the following observation")
    if done is not None and np.any(np.asarray(done)[:-1]):
        raise NonContiguousTrajectory("terminal transition in the middle of a trajectory")


def retrace(
    rewards: torch.Tensor,
    dones: torch.Tensor,
    q_taken: torch.Tensor,
    v_next: torch.Tensor,
    log_ratio: torch.Tensor,
    gamma: float,
    lam: float = 1.0,
) -> torch.Tensor:
    """Backward Retrace recursion along the last axis.

    Arguments all have shape ``(..., L)``:
    ``q_taken[t]`` is the (target) critic at ``(s_t, a_t)``, ``v_next[t]`` is
    ``E_pi Q(s_{t+1}, .)`` and ``log_ratio[t] = log pi(a_t|s_t) - log mu(a_t|s_t)``.
    The last step bootstraps from ``v_next`` alone; terminal steps bootstrap 0.
    """
    c = lam * torch.clamp(torch.exp(log_ratio), max=1.0)
    notdone = 1.0 - dones.to(rewards.dtype)
    L = rewards.shape[-1]
    out = torch.empty_like(rewards)
    ret = rewards[..., L - 1] + gamma * notdone[..., L - 1] * v_next[..., L - 1]
    out[..., L - 1] = ret
    for t in range(L - 2, -1, -1):
        correction = c[..., t + 1] * (ret - q_taken[..., t + 1])
        ret = rewards[..., t] + gamma * notdone[..., t] * (v_next[..., t] + correction)
        out[..., t] = ret
    return out

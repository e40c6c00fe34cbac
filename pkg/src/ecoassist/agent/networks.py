"""Policy and critic networks for the hybrid (torque, gear-change) action."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

GEAR_CHANGES = (-1, 0, 1)
N_GEAR_ACTIONS = len(GEAR_CHANGES)
MASKED_LOGIT = -1e9

OBS_FIELDS = ("v_h", "v_rel", "a_des", "a", "z", "n_g", "m_v", "theta", "in_range")


@dataclass(frozen=True)
class ObservationSpec:
    """Fixed affine normalization ``(x - offset) / scale`` per component."""

    offsets: tuple[float, ...] = (10.0, 0.0, 0.0, 0.0, 100.0, 5.5, 7500.0, 0.0, 0.5)
    scales: tuple[float, ...] = (10.0, 10.0, 2.0, 2.0, 100.0, 3.0, 2500.0, 0.04, 0.5)
    torque_scale: float = 10000.0
    fields: tuple[str, ...] = field(default=OBS_FIELDS, init=False)

    def __post_init__(self):
        if len(self.offsets) != len(OBS_FIELDS) or len(self.scales) != len(OBS_FIELDS):
            raise ValueError(f"need {len(OBS_FIELDS)} offsets and scales")
        if min(self.scales) <= 0 or self.torque_scale <= 0:
            raise ValueError("scales must be positive")

    @property
    def dim(self) -> int:
        return len(OBS_FIELDS)

    def encode(self, raw) -> np.ndarray:
        """Normalize raw components ordered as ``OBS_FIELDS``."""
        x = (np.asarray(raw, dtype=float) - np.asarray(self.offsets)) / np.asarray(self.scales)
        return np.clip(x, -5.0, 5.0).astype(np.float32)


def mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for h in hidden:
        layers += [nn.Linear(d, h), nn.ELU()]
        d = h
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


class HybridPolicy(nn.Module):
    """Gaussian over normalized torque times a categorical over gear change.

    The standard deviation has its own network so that the covariance can
    be held fixed independently of the mean and gear heads.
    """

    def __init__(self, obs_dim: int, hidden=(256, 256, 256), init_std: float = 0.3, min_std: float = 1e-3):
        super().__init__()
        self.trunk = mlp(obs_dim, hidden[:-1], hidden[-1])
        self.mean_head = nn.Linear(hidden[-1], 1)
        self.gear_head = nn.Linear(hidden[-1], N_GEAR_ACTIONS)
        self.std_net = mlp(obs_dim, hidden[:1], 1)
        self.min_std = min_std
        self._std_bias = float(np.log(np.expm1(init_std - min_std)))
        with torch.no_grad():
            self.mean_head.weight.mul_(0.01)
            self.mean_head.bias.zero_()
            self.gear_head.weight.mul_(0.01)
            self.gear_head.bias.zero_()
            self.std_net[-1].weight.mul_(0.01)
            self.std_net[-1].bias.fill_(self._std_bias)

    def forward(self, obs: torch.Tensor, gear_mask: torch.Tensor | None = None):
        """Return ``(mean, std, logits)``; masked gear logits are pushed to a large negative value."""
        h = F.elu(self.trunk(obs))
        mean = self.mean_head(h).squeeze(-1)
        std = F.softplus(self.std_net(obs)).squeeze(-1) + self.min_std
        logits = self.gear_head(h)
        if gear_mask is not None:
            logits = logits.masked_fill(~gear_mask, MASKED_LOGIT)
        return mean, std, logits


class Critic(nn.Module):
    """Q(s, a) on the observation, normalized torque and one-hot gear change."""

    def __init__(self, obs_dim: int, hidden=(256, 256, 256)):
        super().__init__()
        self.net = mlp(obs_dim + 1 + N_GEAR_ACTIONS, hidden, 1)

    def forward(self, obs: torch.Tensor, u: torch.Tensor, gear: torch.Tensor) -> torch.Tensor:
        onehot = F.one_hot(gear.long(), N_GEAR_ACTIONS).to(obs.dtype)
        return self.net(torch.cat([obs, u.unsqueeze(-1).to(obs.dtype), onehot], dim=-1)).squeeze(-1)


def gaussian_logprob(u: torch.Tensor, mean: torch.Tensor, std: torch.Tensor) -> torch.Tensor:
    return torch.distributions.Normal(mean, std).log_prob(u)


def categorical_logprob(gear: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits, dim=-1).gather(-1, gear.long().unsqueeze(-1)).squeeze(-1)


def gaussian_kl(mean_p, std_p, mean_q, std_q) -> torch.Tensor:
    """KL(p || q) for univariate Gaussians, elementwise."""
    return torch.log(std_q / std_p) + (std_p**2 + (mean_p - mean_q) ** 2) / (2 * std_q**2) - 0.5


def categorical_kl(logits_p, logits_q) -> torch.Tensor:
    """KL(p || q) over the last axis."""
    lp = torch.log_softmax(logits_p, dim=-1)
    lq = torch.log_softmax(logits_q, dim=-1)
    return (lp.exp() * (lp - lq)).sum(-1)

"""FIFO replay of transitions, sampled as contiguous same-episode segments."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .networks import N_GEAR_ACTIONS


class NotReady(RuntimeError):
    """The buffer does not yet hold enough complete segments."""


@dataclass
class Transition:
    obs: np.ndarray
    u: float  # proposed torque, normalized
    gear: int  # index into GEAR_CHANGES
    reward: float
    next_obs: np.ndarray
    done: bool
    logp_u: float
    logp_gear: float
    gear_mask: np.ndarray
    next_gear_mask: np.ndarray
    t_filtered: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.reward) and np.isfinite(self.logp_u) and np.isfinite(self.logp_gear)):
            raise ValueError("transition reward and behavior log-likelihoods must be finite")
        if not (np.all(np.isfinite(self.obs)) and np.all(np.isfinite(self.next_obs)) and np.isfinite(self.u)):
            raise ValueError("non-finite observation or action in transition")


_FIELDS = {
    "u": np.float64,
    "gear": np.int64,
    "reward": np.float64,
    "done": np.bool_,
    "logp_u": np.float64,
    "logp_gear": np.float64,
    "t_filtered": np.float64,
    "episode": np.int64,
}


class ReplayBuffer:
    """Ring buffer with uniform sampling of length-``segment`` windows.

    A window is valid when all of its transitions come from the same
    episode and are still stored. Pushes and samples are serialized by a
    lock, so several producers may push while one learner samples.
    """

    def __init__(self, capacity: int, obs_dim: int, segment: int = 15):
        if capacity < segment or segment < 1:
            raise ValueError("capacity must be at least one segment long")
        self.capacity = capacity
        self.segment = segment
        self.obs_dim = obs_dim
        self._lock = threading.Lock()
        self.obs = np.zeros((capacity, obs_dim), np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), np.float32)
        self.gear_mask = np.zeros((capacity, N_GEAR_ACTIONS), np.bool_)
        self.next_gear_mask = np.zeros((capacity, N_GEAR_ACTIONS), np.bool_)
        for name, dtype in _FIELDS.items():
            setattr(self, name, np.zeros(capacity, dtype))
        self.valid_start = np.zeros(capacity, np.bool_)
        self.count = 0  # total pushes ever

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    @property
    def oldest(self) -> int:
        return max(0, self.count - self.capacity)

    def push(self, t: Transition, episode: int) -> None:
        with self._lock:
            self._push(t, episode)

    def push_episode(self, transitions, episode: int) -> None:
        """Push a whole episode atomically so concurrent producers do not interleave it."""
        with self._lock:
            for t in transitions:
                self._push(t, episode)

    def _push(self, t: Transition, episode: int) -> None:
        g = self.count
        i = g % self.capacity
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.gear_mask[i] = t.gear_mask
        self.next_gear_mask[i] = t.next_gear_mask
        self.u[i] = t.u
        self.gear[i] = t.gear
        self.reward[i] = t.reward
        self.done[i] = t.done
        self.logp_u[i] = t.logp_u
        self.logp_gear[i] = t.logp_gear
        self.t_filtered[i] = t.t_filtered
        self.episode[i] = episode
        self.valid_start[i] = False
        self.count = g + 1
        # the window ending at g may start at g - segment + 1
        s = g - self.segment + 1
        if s >= self.oldest:
            window = np.arange(s, g + 1) % self.capacity
            self.valid_start[s % self.capacity] = bool(np.all(self.episode[window] == episode))

    def num_segments(self) -> int:
        return int(self.valid_start.sum())

    def sample(self, batch: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Draw ``batch`` windows uniformly; arrays have shape ``(batch, segment, ...)``."""
        with self._lock:
            starts = np.flatnonzero(self.valid_start)
            if len(starts) == 0 or len(self) < batch:
                raise NotReady(f"{len(starts)} complete segments, {len(self)} transitions")
            # order valid slots by age so that sampling does not depend on ring position
            ages = (starts - self.oldest) % self.capacity
            starts = starts[np.argsort(ages, kind="stable")]
            pick = starts[rng.integers(len(starts), size=batch)]
            idx = (pick[:, None] + np.arange(self.segment)[None, :]) % self.capacity
            out = {
                "obs": self.obs[idx],
                "next_obs": self.next_obs[idx],
                "gear_mask": self.gear_mask[idx],
                "next_gear_mask": self.next_gear_mask[idx],
                "index": idx,
            }
            for name in _FIELDS:
                out[name] = getattr(self, name)[idx]
            return out

    def state_dict(self) -> dict:
        with self._lock:
            state = {name: getattr(self, name).copy() for name in [*_FIELDS, "obs", "next_obs", "gear_mask", "next_gear_mask", "valid_start"]}
            state.update(count=self.count, capacity=self.capacity, segment=self.segment, obs_dim=self.obs_dim)
            return state

    @classmethod
    def from_state_dict(cls, state: dict) -> "ReplayBuffer":
        buf = cls(state["capacity"], state["obs_dim"], state["segment"])
        for name in [*_FIELDS, "obs", "next_obs", "gear_mask", "next_gear_mask", "valid_start"]:
            getattr(buf, name)[...] = state[name]
        buf.count = state["count"]
        return buf

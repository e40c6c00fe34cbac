"""MPO actor-critic for the hybrid torque / gear-change action."""

from .mpo import ActResult, MpoAgent, MpoHyperparams, UpdateStats
from .networks import GEAR_CHANGES, Critic, HybridPolicy, ObservationSpec
from .replay import NotReady, ReplayBuffer, Transition
from .retrace import NonContiguousTrajectory, check_contiguous, retrace

__all__ = [
    "ActResult",
    "Critic",
    "GEAR_CHANGES",
    "HybridPolicy",
    "MpoAgent",
    "MpoHyperparams",
    "NonContiguousTrajectory",
    "NotReady",
    "ObservationSpec",
    "ReplayBuffer",
    "Transition",
    "UpdateStats",
    "check_contiguous",
    "retrace",
]

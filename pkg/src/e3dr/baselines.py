"""Reference policies run against the epoch agents: the same top-N bandit
policy with the true user count handed to it, and blind uniform hopping."""

from __future__ import annotations

from typing import Optional

from . import mctopm
from .env import Action, Observation, transmit

__all__ = ["McTopMKnownNAgent", "UniformRandomAgent", "PHASE_POLICY"]

PHASE_POLICY = "policy"


class McTopMKnownNAgent:
    """Top-N policy with the active-user count supplied by the loop each
    slot. Runs continuously: no epochs, no resets, arrivals join as soon as
    the loop admits them."""

    def __init__(self, k: int, rng):
        self.k = k
        self.rng = rng
        self.policy = mctopm.new_state(k, 1 + int(rng.integers(k)))
        self.acted_phase = PHASE_POLICY
        self.events: list[tuple[int, str]] = []
        self._pending_arm: Optional[int] = None
        self._last_obs: Optional[Observation] = None

    def step(self, slot: int, last_obs: Optional[Observation], n_active: int) -> Action:
        if self._pending_arm is not None and last_obs is not None:
            mctopm.mctopm_update(self.policy, self._pending_arm, last_obs)
            self._last_obs = last_obs
        arm = mctopm.mctopm_step(
            self.policy, min(max(n_active, 1), self.k), self._last_obs, self.rng
        )
        self._pending_arm = arm
        return transmit(arm)


class UniformRandomAgent:
    """Transmits on a uniformly random channel every slot."""

    def __init__(self, k: int, rng):
        self.k = k
        self.rng = rng
        self.acted_phase = PHASE_POLICY
        self.events: list[tuple[int, str]] = []

    def step(self, slot: int, last_obs: Optional[Observation], n_active: int) -> Action:
        return transmit(1 + int(self.rng.integers(self.k)))

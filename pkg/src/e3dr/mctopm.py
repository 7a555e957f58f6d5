"""Musical-chairs-on-top-N bandit policy over UCB indices.

Each user keeps per-arm pull counts and reward sums, scores arms with
mean + sqrt(ln t / 2 pulls), and moves between arms by three rules: leave an
arm that drops out of the current top-N set (preferring targets whose
previous index was no larger than the departed arm's), hop uniformly inside
the top set after a collision while unfixed, and otherwise stay put and mark
the chair as fixed. Collisions count as pulls with zero reward, so the
empirical means estimate throughput, not raw channel quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .env import Observation

__all__ = [
    "ArmStats",
    "McTopMState",
    "new_state",
    "ucb_index",
    "top_set",
    "mctopm_step",
    "mctopm_update",
    "reset",
]

_INF = float("inf")


@dataclass(slots=True)
class ArmStats:
    pulls: int = 0
    reward_sum: float = 0.0
    clean_pulls: int = 0  # pulls that did not collide

    def mean(self) -> float:
        """Throughput estimate: collisions count as zero-reward pulls."""
        return self.reward_sum / self.pulls

    def clean_mean(self) -> Optional[float]:
        """Channel-quality estimate from collision-free pulls only; None
        when every pull so far collided."""
        return self.reward_sum / self.clean_pulls if self.clean_pulls else None


@dataclass(slots=True)
class McTopMState:
    arms: list[ArmStats]
    current_arm: int
    fixed: bool = False
    t_policy: int = 0
    prev_indices: Optional[list[float]] = None

    @property
    def k(self) -> int:
        return len(self.arms)

    def clean_means(self) -> list[Optional[float]]:
        """Per-arm channel-quality estimates (collision pulls excluded).
        This is what the detect phase compares its collision-free probe
        means against; the policy indices themselves keep using the
        throughput means."""
        return [a.clean_mean() for a in self.arms]


def new_state(k: int, current_arm: int) -> McTopMState:
    if not (1 <= current_arm <= k):
        raise ValueError(f"current arm {current_arm} outside [1..{k}]")
    return McTopMState(arms=[ArmStats() for _ in range(k)], current_arm=current_arm)


def ucb_index(stats: ArmStats, t: float) -> float:
    """Optimistic score; unpulled arms dominate everything."""
    if stats.pulls == 0:
        return _INF
    return stats.reward_sum / stats.pulls + math.sqrt(math.log(t) / (2.0 * stats.pulls))


def top_set(indices: list[float], n: int) -> set[int]:
    """The n channels (1-based) with largest indices; ties favor the
    smaller channel index, so the result is deterministic."""
    k = len(indices)
    if not (1 <= n <= k):
        raise ValueError(f"top-set size {n} outside [1..{k}]")
    order = sorted(range(k), key=lambda i: (-indices[i], i))
    return {i + 1 for i in order[:n]}


def _indices(state: McTopMState) -> list[float]:
    log_t = math.log(max(1, state.t_policy))
    return [
        a.reward_sum / a.pulls + math.sqrt(log_t / (2.0 * a.pulls)) if a.pulls else _INF
        for a in state.arms
    ]


def mctopm_step(
    state: McTopMState, n: int, last_obs: Optional[Observation], rng
) -> int:
    """Pick the next arm. `last_obs` is the observation from this policy's
    most recent transmission (None before the first one)."""
    indices = _indices(state)
    cur = state.current_arm
    # membership under the same ordering top_set uses: an arm precedes the
    # current one if its index is larger, or equal with a smaller channel
    cur_idx = indices[cur - 1]
    preceding = 0
    for j, v in enumerate(indices):
        if v > cur_idx or (v == cur_idx and j < cur - 1):
            preceding += 1
    if preceding < n and (
        state.fixed or last_obs is None or not last_obs.collided
    ):
        # steady state: in the top set without an unresolved collision
        state.fixed = True
        state.prev_indices = indices
        return cur
    top = top_set(indices, n)
    if cur not in top:
        prev = state.prev_indices
        if prev is None:
            cands = sorted(top)
        else:
            cands = sorted(a for a in top if prev[a - 1] <= prev[cur - 1])
            if not cands:
                cands = sorted(top)
        nxt = cands[rng.integers(len(cands))]
        state.fixed = False
    else:  # collision while not yet fixed: hop anywhere in the top set
        cands = sorted(top)
        nxt = cands[rng.integers(len(cands))]
    state.prev_indices = indices
    state.current_arm = nxt
    return nxt


def mctopm_update(state: McTopMState, arm: int, obs: Observation) -> None:
    """Fold in the result of transmitting on `arm`. A collision still counts
    as a pull (observed throughput zero)."""
    state.t_policy += 1
    stats = state.arms[arm - 1]
    stats.pulls += 1
    if not obs.collided:
        stats.reward_sum += obs.reward
        stats.clean_pulls += 1


def reset(state: McTopMState) -> None:
    """Zero all learning state; the user keeps sitting on current_arm."""
    for a in state.arms:
        a.pulls = 0
        a.reward_sum = 0.0
        a.clean_pulls = 0
    state.t_policy = 0
    state.fixed = False
    state.prev_indices = None

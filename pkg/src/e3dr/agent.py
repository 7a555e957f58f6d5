"""Per-user epoch state machine: orthogonalize, estimate, explore-exploit,
detect, repeat.

Every active user cycles through the same slot-aligned schedule inside an
epoch of `epoch_len` slots:

  [0, or_len)                      random-hop until a collision-free
                                   transmission locks a channel
  [or_len, or_len + est_len)       count locked users by one-slot-per-channel
                                   signaling (or the K-frame collision variant
                                   for sensing-incapable users)
  then repeating sub-cycles of     explore-exploit (ee_len slots of the
                                   top-N policy) followed by a detect phase
                                   (ceil(K/N) rounds of `detect_samples`
                                   probe slots plus N signaling slots),
                                   truncated at the epoch boundary.

Users that fail to lock (more users than channels) back off and idle until
the next epoch. A detect round that finds a channel's probe mean drifted by
at least `psi` from the user's own learned mean broadcasts one transmission
in its signaling slot; every listener raises the same change flag, and all
users reset their bandit state together at the next sub-cycle boundary.

Observations arrive one slot late: each step first folds the previous
slot's observation into the state, then handles phase transitions, then
acts. That ordering makes the lock/flag/estimate bookkeeping exact at phase
and epoch boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import mctopm
from .env import Action, Observation, idle, sense, transmit

__all__ = [
    "E3drParams",
    "E3drAgent",
    "compute_or_duration",
    "compute_detect_duration",
    "detect_assignment",
    "detect_phase_len",
    "PHASE_OR",
    "PHASE_ESTIMATE",
    "PHASE_EXPLORE",
    "PHASE_DETECT_MEASURE",
    "PHASE_DETECT_SIGNAL",
    "PHASE_BACKED_OFF",
]

PHASE_OR = "or"
PHASE_ESTIMATE = "estimate"
PHASE_EXPLORE = "explore_exploit"
PHASE_DETECT_MEASURE = "detect_measure"
PHASE_DETECT_SIGNAL = "detect_signal"
PHASE_BACKED_OFF = "backed_off"

# internal phase ids
_OR, _ESTIMATE, _EXPLORE, _DETECT, _BACKED_OFF = range(5)


def compute_or_duration(k: int, delta: float) -> int:
    """Slots of random hopping after which all users are locked with
    probability at least 1 - delta."""
    if k < 1:
        raise ValueError(f"channel count must be >= 1, got {k}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"failure probability must be in (0, 1), got {delta}")
    return math.ceil(math.log(delta / k) / math.log(1.0 - 1.0 / (4.0 * k)))


def compute_detect_duration(epsilon: float, delta: float) -> int:
    """Probe samples per channel for an epsilon/2-accurate mean with
    probability at least 1 - delta (Hoeffding sizing)."""
    if epsilon <= 0.0:
        raise ValueError(f"resolution must be > 0, got {epsilon}")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"failure probability must be in (0, 1), got {delta}")
    return math.ceil((2.0 / (epsilon * epsilon)) * math.log(2.0 / delta))


def detect_assignment(rank: int, v: int, k: int, n: int) -> Optional[int]:
    """Channel probed by the rank-th user in detect round v, or None when
    the arithmetic overflows past K (those users sit the round out)."""
    span = math.ceil(k / n)
    if not (1 <= rank <= n):
        raise ValueError(f"rank {rank} outside [1..{n}]")
    if not (1 <= v <= span):
        raise ValueError(f"round {v} outside [1..{span}]")
    a = (rank - 1) * span + v
    return a if a <= k else None


def detect_phase_len(k: int, n: int, detect_samples: int) -> int:
    """Total detect-phase slots: ceil(K/N) rounds of probing plus signaling."""
    return math.ceil(k / n) * (detect_samples + n)


@dataclass(frozen=True)
class E3drParams:
    """Tunables shared by every agent in a run.

    psi is the drift threshold for flagging a change; values at or below
    0.05 re-trigger on estimation noise, so they are rejected. epoch_len
    must fit the fixed prefix plus at least one full explore-exploit +
    detect sub-cycle even in the worst case (a single locked user probing
    all K channels itself).
    """

    k: int
    delta: float = 0.1
    epsilon: float = 0.1
    psi: float = 0.1
    ee_len: int = 2000
    epoch_len: int = 12000
    sensing: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k: channel count must be >= 1, got {self.k}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta: must be in (0, 1), got {self.delta}")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon: must be in (0, 1), got {self.epsilon}")
        if not self.psi > 0.05:
            raise ValueError(
                f"psi: drift threshold must exceed 0.05, got {self.psi}"
            )
        if self.ee_len < 1:
            raise ValueError(f"ee_len: must be >= 1, got {self.ee_len}")
        worst_cycle = self.ee_len + self.k * (self.detect_samples + 1)
        need = self.or_len + self.est_len + worst_cycle
        if self.epoch_len < need:
            raise ValueError(
                f"epoch_len: {self.epoch_len} is too short; the fixed prefix plus "
                f"one worst-case sub-cycle needs {need} slots"
            )

    @property
    def or_len(self) -> int:
        return compute_or_duration(self.k, self.delta)

    @property
    def est_len(self) -> int:
        return self.k if self.sensing else self.k * self.k

    @property
    def detect_samples(self) -> int:
        return compute_detect_duration(self.epsilon, self.delta)


class E3drAgent:
    """One user's state machine. Drive with step(slot, last_obs) once per
    slot while the user is active; last_obs is the observation produced by
    this agent's previous action (None on the first step)."""

    def __init__(self, params: E3drParams, rng):
        self.params = params
        self.rng = rng
        self.locked_channel: Optional[int] = None
        self.n_hat: Optional[int] = None
        self.rank: Optional[int] = None
        self.policy: Optional[mctopm.McTopMState] = None
        self.learned_means: list[Optional[float]] = [None] * params.k
        self.change_flag = False
        self.detect_anomalies = 0
        self.events: list[tuple[int, str]] = []
        self.acted_phase = PHASE_OR
        self._phase = _OR
        self.phase_clock = 0
        self._pending: Optional[tuple] = None
        self._busy_channels: set[int] = set()
        self._collision_channels: set[int] = set()
        self._probe_sum = [0.0] * (params.k + 1)
        self._probe_count = [0] * (params.k + 1)
        self._detect_len: Optional[int] = None
        self._last_policy_obs: Optional[Observation] = None

    @classmethod
    def locked_at_estimate(cls, params: E3drParams, channel: int, rng) -> "E3drAgent":
        """An agent already locked on `channel` and about to start the
        estimate phase, for driving that phase in isolation. Feed it slots
        that are not epoch boundaries."""
        if not (1 <= channel <= params.k):
            raise ValueError(f"channel {channel} outside [1..{params.k}]")
        a = cls(params, rng)
        a.locked_channel = channel
        a._phase = _ESTIMATE
        return a

    # -- public --------------------------------------------------------

    @property
    def phase(self) -> str:
        return (PHASE_OR, PHASE_ESTIMATE, PHASE_EXPLORE, "detect", PHASE_BACKED_OFF)[
            self._phase
        ]

    @property
    def backed_off(self) -> bool:
        return self._phase == _BACKED_OFF

    def probe_mean(self, channel: int) -> Optional[float]:
        c = self._probe_count[channel]
        return self._probe_sum[channel] / c if c else None

    def step(self, slot: int, last_obs: Optional[Observation], n_active: int = 0) -> Action:
        # n_active is accepted for interface parity with the baselines and
        # deliberately ignored: this agent estimates the user count itself.
        self._ingest(slot, last_obs)
        if slot % self.params.epoch_len == 0:
            self._enter_or(slot)
        else:
            self._maybe_transition(slot)
        action = self._act(slot)
        self.phase_clock += 1
        return action

    # -- observation ingestion ------------------------------------------

    def _ingest(self, slot: int, obs: Optional[Observation]) -> None:
        pending = self._pending
        self._pending = None
        if pending is None or obs is None:
            return
        tag = pending[0]
        if tag == "ee":
            mctopm.mctopm_update(self.policy, pending[1], obs)
            self._last_policy_obs = obs
        elif tag == "probe":
            ch = pending[1]
            self._probe_sum[ch] += obs.reward
            self._probe_count[ch] += 1
            if obs.collided:
                self.detect_anomalies += 1
        elif tag == "listen":
            if obs.busy and not self.change_flag:
                self.change_flag = True
                self.events.append((slot, "flag"))
        elif tag == "or_probe":
            if not obs.collided:
                self.locked_channel = pending[1]
                self.events.append((slot, "locked"))
        elif tag == "est_sense":
            if obs.busy:
                self._busy_channels.add(pending[1])
        elif tag == "est_probe":
            if obs.collided:
                self._collision_channels.add(pending[1])

    # -- phase transitions -----------------------------------------------

    def _enter_or(self, slot: int) -> None:
        self._apply_change_flag(slot)
        self._phase = _OR
        self.phase_clock = 0
        self.locked_channel = None
        self.n_hat = None
        self.rank = None
        self._busy_channels.clear()
        self._collision_channels.clear()

    def _maybe_transition(self, slot: int) -> None:
        p = self.params
        if self._phase == _OR:
            if self.phase_clock >= p.or_len:
                if self.locked_channel is None:
                    self._phase = _BACKED_OFF
                    self.phase_clock = 0
                    self.events.append((slot, "backed_off"))
                else:
                    self._phase = _ESTIMATE
                    self.phase_clock = 0
        elif self._phase == _ESTIMATE:
            if self.phase_clock >= p.est_len:
                self._finish_estimate()
                self.phase_clock = 0
        elif self._phase == _EXPLORE:
            if self.phase_clock >= p.ee_len:
                self.learned_means = self.policy.clean_means()
                for ch in range(1, p.k + 1):
                    self._probe_sum[ch] = 0.0
                    self._probe_count[ch] = 0
                self._phase = _DETECT
                self.phase_clock = 0
        elif self._phase == _DETECT:
            if self.phase_clock >= self._detect_len:
                self._apply_change_flag(slot)
                self._phase = _EXPLORE
                self.phase_clock = 0

    def _apply_change_flag(self, slot: int) -> None:
        if self.change_flag:
            if self.policy is not None:
                mctopm.reset(self.policy)
                self.events.append((slot, "reset"))
            self.change_flag = False

    def _finish_estimate(self) -> None:
        p = self.params
        seen = self._busy_channels if p.sensing else self._collision_channels
        occupied = seen | {self.locked_channel}
        self.n_hat = len(occupied)
        self.rank = sum(1 for c in occupied if c <= self.locked_channel)
        self._detect_len = detect_phase_len(p.k, self.n_hat, p.detect_samples)
        if self.policy is None:
            self.policy = mctopm.new_state(p.k, self.locked_channel)
        else:
            self.policy.current_arm = self.locked_channel
            self.policy.fixed = False
        self._phase = _EXPLORE

    # -- per-phase actions -------------------------------------------------

    def _act(self, slot: int) -> Action:
        ph = self._phase
        if ph == _EXPLORE:
            self.acted_phase = PHASE_EXPLORE
            arm = mctopm.mctopm_step(
                self.policy, self.n_hat, self._last_policy_obs, self.rng
            )
            self._pending = ("ee", arm)
            return transmit(arm)
        if ph == _DETECT:
            return self._act_detect(slot)
        if ph == _OR:
            self.acted_phase = PHASE_OR
            if self.locked_channel is not None:
                return transmit(self.locked_channel)
            ch = 1 + int(self.rng.integers(self.params.k))
            self._pending = ("or_probe", ch)
            return transmit(ch)
        if ph == _ESTIMATE:
            self.acted_phase = PHASE_ESTIMATE
            if self.params.sensing:
                t = self.phase_clock + 1
                if t == self.locked_channel:
                    return transmit(t)
                self._pending = ("est_sense", t)
                return sense(t)
            k = self.params.k
            frame = self.phase_clock // k + 1
            t = self.phase_clock % k + 1
            if frame != self.locked_channel:
                return transmit(self.locked_channel)
            if t == self.locked_channel:
                return transmit(t)
            self._pending = ("est_probe", t)
            return transmit(t)
        self.acted_phase = PHASE_BACKED_OFF
        return idle()

    def _act_detect(self, slot: int) -> Action:
        p = self.params
        cycle = p.detect_samples + self.n_hat
        v = self.phase_clock // cycle + 1
        pos = self.phase_clock % cycle
        own = detect_assignment(self.rank, v, p.k, self.n_hat)
        if pos < p.detect_samples:
            self.acted_phase = PHASE_DETECT_MEASURE
            if own is None:
                return idle()
            self._pending = ("probe", own)
            return transmit(own)
        self.acted_phase = PHASE_DETECT_SIGNAL
        t = pos - p.detect_samples + 1
        if t == self.rank:
            if own is not None and self._probe_count[own]:
                learned = self.learned_means[own - 1]
                if learned is not None:
                    drift = abs(self._probe_sum[own] / self._probe_count[own] - learned)
                    if drift >= p.psi:
                        if not self.change_flag:
                            self.change_flag = True
                            self.events.append((slot, "flag"))
                        return transmit(own)
            return idle()
        ch = detect_assignment(t, v, p.k, self.n_hat)
        if ch is not None:
            self._pending = ("listen", ch)
            return sense(ch)
        return idle()

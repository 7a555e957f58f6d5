"""Slotted wireless medium with block-wise stationary Bernoulli channels.

K channels, synchronous slots. A transmission succeeds only when it is the
sole transmission on its channel that slot; otherwise every transmitter on
the channel sees a collision and zero reward. Sensing is passive and returns
only busy/idle. Users arrive and depart on a fixed schedule: departures take
effect at end-of-slot, arrivals are queued as "pending" until the simulation
loop activates them (epoch-based algorithms admit newcomers only at the next
orthogonalization round).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ChannelProcess",
    "PopulationSchedule",
    "PopulationEvent",
    "Action",
    "Observation",
    "Environment",
    "transmit",
    "sense",
    "idle",
]

# Slots of per-channel uniforms drawn ahead of time. The draw for (slot, k)
# is a pure function of (seed, slot, k), never of the submitted actions, so
# traces stay comparable across algorithms sharing a seed.
_CHUNK_SLOTS = 4096


@dataclass(frozen=True)
class ChannelProcess:
    """Per-block channel means: block b spans [start_b, start_{b+1})."""

    k: int
    blocks: tuple[tuple[int, tuple[float, ...]], ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"channel count must be >= 1, got {self.k}")
        if not self.blocks:
            raise ValueError("channel process needs at least one block")
        starts = [s for s, _ in self.blocks]
        if starts[0] != 0:
            raise ValueError(f"first block must start at slot 0, got {starts[0]}")
        if any(b >= a for b, a in zip(starts, starts[1:])):
            raise ValueError(f"block start slots must be strictly increasing: {starts}")
        for s, means in self.blocks:
            if len(means) != self.k:
                raise ValueError(
                    f"block at slot {s} has {len(means)} means, expected {self.k}"
                )
            if any(not (0.0 <= m <= 1.0) for m in means):
                raise ValueError(f"block at slot {s} has means outside [0, 1]: {means}")
        object.__setattr__(self, "blocks", tuple((int(s), tuple(map(float, m))) for s, m in self.blocks))

    @classmethod
    def stationary(cls, means) -> "ChannelProcess":
        return cls(k=len(means), blocks=((0, tuple(means)),))

    @property
    def starts(self) -> list[int]:
        return [s for s, _ in self.blocks]

    def block_of(self, slot: int) -> int:
        """1-based index of the block containing `slot`."""
        if slot < 0:
            raise ValueError(f"slot must be >= 0, got {slot}")
        return bisect.bisect_right(self.starts, slot)

    def means_at(self, slot: int) -> tuple[float, ...]:
        return self.blocks[self.block_of(slot) - 1][1]


@dataclass(frozen=True)
class PopulationEvent:
    slot: int
    kind: str  # "arrival" | "departure"
    user: Optional[int] = None  # departures only

    def __post_init__(self):
        if self.kind not in ("arrival", "departure"):
            raise ValueError(f"unknown population event kind: {self.kind!r}")
        if self.slot < 0:
            raise ValueError(f"event slot must be >= 0, got {self.slot}")
        if self.kind == "departure" and self.user is None:
            raise ValueError("departure event needs a user id")


@dataclass(frozen=True)
class PopulationSchedule:
    """Initial user count plus timed arrival/departure events.

    Initial users get ids 1..initial_users; each arrival allocates the next
    id in order. A departure must name a user that exists (arrived or
    initial) and has not already departed.
    """

    initial_users: int
    events: tuple[PopulationEvent, ...] = ()

    def __post_init__(self):
        if self.initial_users < 0:
            raise ValueError(f"initial user count must be >= 0, got {self.initial_users}")
        evs = tuple(self.events)
        if any(a.slot > b.slot for a, b in zip(evs, evs[1:])):
            raise ValueError("population events must be sorted by slot")
        alive = set(range(1, self.initial_users + 1))
        next_id = self.initial_users + 1
        for ev in evs:
            if ev.kind == "arrival":
                alive.add(next_id)
                next_id += 1
            else:
                if ev.user not in alive:
                    raise ValueError(
                        f"departure at slot {ev.slot} references user {ev.user}, "
                        "which is not present"
                    )
                alive.remove(ev.user)
        object.__setattr__(self, "events", evs)


@dataclass(frozen=True, slots=True)
class Action:
    """Exactly one of transmit(k), sense(k), idle() per user per slot."""

    kind: str  # "transmit" | "sense" | "idle"
    channel: Optional[int] = None


_TRANSMIT: dict[int, Action] = {}
_SENSE: dict[int, Action] = {}
_IDLE = Action("idle")


def transmit(channel: int) -> Action:
    a = _TRANSMIT.get(channel)
    if a is None:
        a = _TRANSMIT[channel] = Action("transmit", channel)
    return a


def sense(channel: int) -> Action:
    a = _SENSE.get(channel)
    if a is None:
        a = _SENSE[channel] = Action("sense", channel)
    return a


def idle() -> Action:
    return _IDLE


@dataclass(frozen=True, slots=True)
class Observation:
    """What one user sees after a slot.

    Transmissions carry (reward, collided); senses carry busy; idling sees
    nothing. Collided transmissions always carry reward 0.
    """

    reward: Optional[float] = None
    collided: Optional[bool] = None
    busy: Optional[bool] = None


# The full observation alphabet is tiny; intern it.
OBS_REWARD_0 = Observation(reward=0.0, collided=False)
OBS_REWARD_1 = Observation(reward=1.0, collided=False)
OBS_COLLIDED = Observation(reward=0.0, collided=True)
OBS_BUSY = Observation(busy=True)
OBS_QUIET = Observation(busy=False)
OBS_NONE = Observation()


class Environment:
    """Deterministic medium: same (process, schedule, seed) and action
    sequence always reproduce the same observations."""

    def __init__(self, process: ChannelProcess, schedule: PopulationSchedule, seed: int):
        self.process = process
        self.schedule = schedule
        self.seed = seed
        self.slot = 0
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._chunk_base = 0
        self._uniforms = self._rng.random((_CHUNK_SLOTS, process.k))
        self._active: set[int] = set(range(1, schedule.initial_users + 1))
        self._pending: list[int] = []
        self._next_id = schedule.initial_users + 1
        self._events_by_slot: dict[int, list[PopulationEvent]] = {}
        for ev in schedule.events:
            self._events_by_slot.setdefault(ev.slot, []).append(ev)
        # Cache current block so the hot path avoids a bisect per slot.
        self._block_idx = 0
        self._block_means = process.blocks[0][1]
        self._next_block_start = (
            process.blocks[1][0] if len(process.blocks) > 1 else None
        )

    # -- population ---------------------------------------------------

    @property
    def active_users(self) -> list[int]:
        return sorted(self._active)

    @property
    def pending_users(self) -> list[int]:
        return list(self._pending)

    def activate_pending(self) -> list[int]:
        """Admit all queued arrivals; returns the newly active ids."""
        joined = self._pending
        self._pending = []
        self._active.update(joined)
        return joined

    # -- dynamics ------------------------------------------------------

    def block_of(self, slot: int) -> int:
        return self.process.block_of(slot)

    def step(self, actions: dict[int, Action]) -> dict[int, Observation]:
        """Advance one slot. Users absent from `actions` idle implicitly."""
        k = self.process.k
        if self._next_block_start is not None and self.slot >= self._next_block_start:
            self._block_idx = self.process.block_of(self.slot) - 1
            self._block_means = self.process.blocks[self._block_idx][1]
            nxt = self._block_idx + 1
            self._next_block_start = (
                self.process.blocks[nxt][0] if nxt < len(self.process.blocks) else None
            )
        row = self.slot - self._chunk_base
        if row >= _CHUNK_SLOTS:
            self._chunk_base += _CHUNK_SLOTS
            self._uniforms = self._rng.random((_CHUNK_SLOTS, k))
            row = 0
        uniforms = self._uniforms[row]

        counts = [0] * (k + 1)
        for uid, act in actions.items():
            if uid not in self._active:
                raise ValueError(f"user {uid} is not active at slot {self.slot}")
            ch = act.channel
            if ch is not None and not (1 <= ch <= k):
                raise ValueError(
                    f"user {uid} targets channel {ch}, outside [1..{k}]"
                )
            if act.kind == "transmit":
                counts[ch] += 1

        means = self._block_means
        obs: dict[int, Observation] = {}
        for uid, act in actions.items():
            if act.kind == "transmit":
                ch = act.channel
                if counts[ch] > 1:
                    obs[uid] = OBS_COLLIDED
                else:
                    obs[uid] = (
                        OBS_REWARD_1 if uniforms[ch - 1] < means[ch - 1] else OBS_REWARD_0
                    )
            elif act.kind == "sense":
                obs[uid] = OBS_BUSY if counts[act.channel] else OBS_QUIET
            else:
                obs[uid] = OBS_NONE

        for ev in self._events_by_slot.get(self.slot, ()):
            if ev.kind == "arrival":
                self._pending.append(self._next_id)
                self._next_id += 1
            else:
                self._active.discard(ev.user)
                if ev.user in self._pending:
                    self._pending.remove(ev.user)
        self.slot += 1
        return obs

"""Regret, collision accounting, and closed-form performance bounds.

Regret is measured against a per-slot oracle: the sum of the N_t largest
channel means of the current block, where N_t is the number of active users
that slot. Realized value is the mean of each successfully transmitted
channel (collisions contribute nothing), so the series is the expected
throughput gap accumulated over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .env import ChannelProcess, PopulationSchedule

__all__ = [
    "SlotRecord",
    "RunTrace",
    "BoundParams",
    "optimal_rate",
    "pseudo_regret",
    "collision_count",
    "regret_bound",
    "collision_bound",
]


class SlotRecord(NamedTuple):
    user: int
    phase: str
    kind: str  # "transmit" | "sense" | "idle"
    channel: Optional[int]
    reward: float
    collided: bool


@dataclass
class RunTrace:
    """Per-slot records for every active user (one record per user per
    slot, so the slot's record count is the active-user count)."""

    k: int
    slots: list[list[SlotRecord]]

    @property
    def horizon(self) -> int:
        return len(self.slots)

    def active_counts(self) -> list[int]:
        return [len(rs) for rs in self.slots]

    def append(self, records: list[SlotRecord]) -> None:
        self.slots.append(records)


def optimal_rate(means, n: int) -> float:
    """Best collision-free expected throughput of n users: the sum of the
    min(n, K) largest means (surplus users contribute nothing)."""
    if n < 1:
        raise ValueError(f"user count must be >= 1, got {n}")
    take = min(n, len(means))
    return sum(sorted(means, reverse=True)[:take])


def _block_prefixes(process: ChannelProcess) -> list[tuple[int, list[float], list[float]]]:
    out = []
    for start, means in process.blocks:
        ordered = sorted(means, reverse=True)
        prefix = [0.0]
        for m in ordered:
            prefix.append(prefix[-1] + m)
        out.append((start, list(means), prefix))
    return out


def pseudo_regret(
    trace: RunTrace,
    process: ChannelProcess,
    schedule: Optional[PopulationSchedule] = None,
) -> np.ndarray:
    """Cumulative expected-throughput gap, one entry per slot.

    Uses channel means rather than realized rewards, which is the
    lower-variance estimator of the same expectation.
    """
    if trace.k != process.k:
        raise ValueError(
            f"trace has {trace.k} channels but process has {process.k}"
        )
    if schedule is not None and trace.slots:
        if len(trace.slots[0]) != schedule.initial_users:
            raise ValueError(
                f"trace starts with {len(trace.slots[0])} users but the schedule "
                f"says {schedule.initial_users}"
            )
    blocks = _block_prefixes(process)
    horizon = trace.horizon
    increments = np.zeros(horizon)
    bi = 0
    for slot in range(horizon):
        while bi + 1 < len(blocks) and slot >= blocks[bi + 1][0]:
            bi += 1
        _, means, prefix = blocks[bi]
        records = trace.slots[slot]
        realized = 0.0
        for rec in records:
            if rec.kind == "transmit" and not rec.collided:
                realized += means[rec.channel - 1]
        n_t = len(records)
        if n_t:
            increments[slot] = prefix[min(n_t, len(means))] - realized
    return np.cumsum(increments)


def collision_count(trace: RunTrace) -> dict[str, int]:
    """Collisions incurred per phase (one per colliding user per slot),
    plus a grand total under the key "total"."""
    totals: dict[str, int] = {}
    grand = 0
    for records in trace.slots:
        for rec in records:
            if rec.collided:
                totals[rec.phase] = totals.get(rec.phase, 0) + 1
                grand += 1
    totals["total"] = grand
    return totals


@dataclass(frozen=True)
class BoundParams:
    """Inputs to the closed-form regret/collision bounds.

    detect_measure_len is the total probing time of one detect phase,
    detect_samples * ceil(k / n_initial). c_log scales the logarithmic
    explore-exploit term; 0 keeps only the structural terms.
    """

    n_initial: int
    k: int
    or_len: int
    est_len: int
    detect_samples: int
    ee_len: int
    detect_measure_len: int
    epoch_len: int
    horizon: int
    arrivals: int = 0
    departures: int = 0
    c_log: float = 0.0

    def __post_init__(self):
        for name in (
            "n_initial",
            "k",
            "or_len",
            "est_len",
            "detect_samples",
            "ee_len",
            "detect_measure_len",
            "epoch_len",
            "horizon",
            "arrivals",
            "departures",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.epoch_len > self.horizon:
            raise ValueError(
                f"epoch_len {self.epoch_len} exceeds horizon {self.horizon}"
            )

    @property
    def sub_cycles(self) -> int:
        """Explore-exploit + detect repetitions fitting in one epoch."""
        usable = self.epoch_len - self.or_len - self.est_len
        return math.ceil(usable / (self.ee_len + self.detect_measure_len + self.k))

    @property
    def single_epoch_regret(self) -> float:
        x = self.sub_cycles
        log_term = self.c_log * math.log(self.horizon)
        detect_term = math.ceil(self.k / self.n_initial) * (self.detect_samples - 1)
        return self.n_initial * (self.or_len + self.k - 1) + x * (log_term + detect_term)


def regret_bound(p: BoundParams) -> float:
    """Closed-form cap on cumulative regret over the horizon. The epoch
    multiplier is clamped at zero: with enough arrivals the formula leaves
    its validity regime and only the departure term remains."""
    multiplier = max(0.0, 2.0 * p.horizon / p.epoch_len - p.arrivals)
    return p.single_epoch_regret * multiplier + p.departures * (p.epoch_len - p.est_len)


def collision_bound(p: BoundParams) -> float:
    """Closed-form cap on total collisions over the horizon."""
    per_epoch = p.n_initial * p.or_len + p.c_log * math.log(p.horizon)
    return (p.horizon / p.epoch_len) * per_epoch

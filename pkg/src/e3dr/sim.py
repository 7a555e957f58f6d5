"""Synchronous slot loop: steps every active agent, feeds the actions to the
environment, and records the full trace."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .env import Environment, Observation
from .metrics import RunTrace, SlotRecord

__all__ = ["SimResult", "simulate"]


@dataclass
class SimResult:
    trace: RunTrace
    agents: dict[int, object]  # every agent ever created, departed included
    events: dict[int, list[tuple[int, str]]]


def simulate(
    env: Environment,
    make_agent: Callable[[int], object],
    horizon: int,
    epoch_len: Optional[int] = None,
) -> SimResult:
    """Run `horizon` slots. Pending arrivals are admitted at slots that are
    multiples of `epoch_len` (every slot when epoch_len is None, for
    policies without an epoch structure). Initial users are admitted at
    slot 0 either way.
    """
    agents: dict[int, object] = {uid: make_agent(uid) for uid in env.active_users}
    trace = RunTrace(k=env.process.k, slots=[])
    last_obs: dict[int, Observation] = {}
    for slot in range(horizon):
        if epoch_len is None or slot % epoch_len == 0:
            for uid in env.activate_pending():
                agents[uid] = make_agent(uid)
        active = env.active_users
        n_active = len(active)
        actions = {}
        for uid in active:
            actions[uid] = agents[uid].step(slot, last_obs.get(uid), n_active)
        obs = env.step(actions)
        records = []
        for uid, act in actions.items():
            o = obs[uid]
            records.append(
                SlotRecord(
                    uid,
                    agents[uid].acted_phase,
                    act.kind,
                    act.channel,
                    o.reward if o.reward is not None else 0.0,
                    bool(o.collided),
                )
            )
        trace.append(records)
        last_obs = obs
    return SimResult(
        trace=trace,
        agents=agents,
        events={uid: list(a.events) for uid, a in agents.items()},
    )

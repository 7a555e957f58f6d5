"""Experiment driver: JSON configs, scenario generators, seeded repetition
runner, and CSV outputs.

Seeding scheme (stable under adding runs): run r of a config derives every
stream from numpy SeedSequences keyed by tuples --
(base_seed, r, 0) environment rewards, (base_seed, r, 1, user) per-agent
randomness, (base_seed, r, 2) random channel means. The channel-mean stream
does not depend on the algorithm, so runs with matching (base_seed, r) face
identical channels and reward draws across algorithms.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import agent as agent_mod
from .agent import E3drAgent, E3drParams
from .baselines import McTopMKnownNAgent, UniformRandomAgent
from .env import ChannelProcess, Environment, PopulationEvent, PopulationSchedule
from .metrics import BoundParams, RunTrace, collision_count, pseudo_regret
from .sim import simulate

__all__ = [
    "ConfigError",
    "ChannelSpec",
    "OutputSpec",
    "ExperimentConfig",
    "RunOutput",
    "ExperimentResult",
    "load_config",
    "scenario",
    "run_one",
    "run_experiment",
    "write_outputs",
    "bound_params_for",
    "ALGORITHMS",
]

ALG_E3DR = "e3dr"
ALG_MCTOPM = "mctopm_known_n"
ALG_UNIFORM = "uniform_random"
ALGORITHMS = (ALG_E3DR, ALG_MCTOPM, ALG_UNIFORM)

SCENARIOS = ("static", "case1", "case2", "case3")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    """Either explicit blocks, or per-run uniform-random means redrawn from
    the run's seed stream at the given change slots."""

    blocks: Optional[tuple[tuple[int, tuple[float, ...]], ...]] = None
    random_blocks: Optional[int] = None
    change_slots: tuple[int, ...] = ()

    def __post_init__(self):
        if (self.blocks is None) == (self.random_blocks is None):
            raise ConfigError(
                "channels: specify exactly one of 'blocks' or 'random_blocks'"
            )
        if self.random_blocks is not None:
            if self.random_blocks < 1:
                raise ConfigError("channels.random_blocks: must be >= 1")
            if len(self.change_slots) != self.random_blocks - 1:
                raise ConfigError(
                    "channels.change_slots: need exactly random_blocks - 1 slots"
                )
            if any(s <= 0 for s in self.change_slots) or any(
                b <= a for a, b in zip(self.change_slots, self.change_slots[1:])
            ):
                raise ConfigError(
                    "channels.change_slots: must be positive and strictly increasing"
                )

    def build(self, k: int, rng) -> ChannelProcess:
        if self.blocks is not None:
            return ChannelProcess(k=k, blocks=self.blocks)
        starts = (0,) + tuple(self.change_slots)
        means = rng.random((self.random_blocks, k))
        return ChannelProcess(
            k=k, blocks=tuple((s, tuple(row)) for s, row in zip(starts, means))
        )


@dataclass(frozen=True)
class OutputSpec:
    directory: Optional[str] = None
    stride: int = 100
    write_traces: bool = False

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError("output.stride: must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    k: int
    horizon: int
    runs: int
    base_seed: int
    algorithm: str
    params: E3drParams
    channels: ChannelSpec
    population: PopulationSchedule
    output: OutputSpec = OutputSpec()

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon: must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs: must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm: {self.algorithm!r} is not one of {ALGORITHMS}"
            )
        if self.params.k != self.k:
            raise ConfigError("K: top-level K and params.k disagree")

    def to_dict(self) -> dict:
        p = self.params
        channels: dict = {}
        if self.channels.blocks is not None:
            channels["blocks"] = [
                {"start": s, "means": list(m)} for s, m in self.channels.blocks
            ]
        else:
            channels["random_blocks"] = self.channels.random_blocks
            channels["change_slots"] = list(self.channels.change_slots)
        events = []
        for ev in self.population.events:
            d = {"slot": ev.slot, "type": ev.kind}
            if ev.user is not None:
                d["user"] = ev.user
            events.append(d)
        return {
            "K": self.k,
            "horizon": self.horizon,
            "runs": self.runs,
            "base_seed": self.base_seed,
            "algorithm": self.algorithm,
            "e3dr": {
                "delta": p.delta,
                "epsilon": p.epsilon,
                "psi": p.psi,
                "ee_len": p.ee_len,
                "epoch_len": p.epoch_len,
                "sensing": p.sensing,
            },
            "channels": channels,
            "population": {"initial": self.population.initial_users, "events": events},
            "output": {
                "dir": self.output.directory,
                "stride": self.output.stride,
                "traces": self.output.write_traces,
            },
        }


def _require(data: dict, key: str, where: str = ""):
    if key not in data:
        raise ConfigError(f"{where}{key}: missing required field")
    return data[key]


def config_from_dict(data: dict) -> ExperimentConfig:
    k = _require(data, "K")
    if not isinstance(k, int) or k < 1:
        raise ConfigError(f"K: must be a positive integer, got {k!r}")
    horizon = _require(data, "horizon")
    runs = data.get("runs", 1)
    base_seed = data.get("base_seed", 0)
    algorithm = data.get("algorithm", ALG_E3DR)
    e = data.get("e3dr", {})
    try:
        params = E3drParams(
            k=k,
            delta=e.get("delta", 0.1),
            epsilon=e.get("epsilon", 0.1),
            psi=e.get("psi", 0.1),
            ee_len=e.get("ee_len", 2000),
            epoch_len=e.get("epoch_len", 12000),
            sensing=e.get("sensing", True),
        )
    except ValueError as exc:
        raise ConfigError(f"e3dr.{exc}") from exc

    ch = _require(data, "channels")
    if "blocks" in ch:
        try:
            blocks = tuple(
                (b["start"], tuple(b["means"])) for b in ch["blocks"]
            )
            spec = ChannelSpec(blocks=blocks)
            spec.build(k, np.random.default_rng(0))  # validates block shape
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"channels.blocks: malformed entry ({exc})") from exc
        except ValueError as exc:
            raise ConfigError(f"channels.blocks: {exc}") from exc
    else:
        spec = ChannelSpec(
            random_blocks=_require(ch, "random_blocks", "channels."),
            change_slots=tuple(ch.get("change_slots", ())),
        )

    pop = _require(data, "population")
    try:
        events = tuple(
            PopulationEvent(
                slot=ev["slot"], kind=ev["type"], user=ev.get("user")
            )
            for ev in pop.get("events", ())
        )
        population = PopulationSchedule(
            initial_users=_require(pop, "initial", "population."), events=events
        )
    except ValueError as exc:
        raise ConfigError(f"population: {exc}") from exc

    out = data.get("output", {})
    output = OutputSpec(
        directory=out.get("dir"),
        stride=out.get("stride", 100),
        write_traces=out.get("traces", False),
    )
    return ExperimentConfig(
        k=k,
        horizon=horizon,
        runs=runs,
        base_seed=base_seed,
        algorithm=algorithm,
        params=params,
        channels=spec,
        population=population,
        output=output,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


# -- scenario generators -------------------------------------------------


def scenario(name: str, seed: int = 1) -> ExperimentConfig:
    """Representative configurations: a static network, dynamic users over
    stationary channels (case1), channel changes with fixed users (case2),
    and both kinds of churn (case3).

    The static scenario stretches the explore-exploit sub-phase so the long
    tail of the horizon is policy time rather than detect overhead; the
    dynamic scenarios keep the short sub-cycles that make them responsive.
    Exact event slots are representative choices, echoed in the config.
    """
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; pick one of {SCENARIOS}")
    horizon = 100_000
    k = 10
    if name == "static":
        return ExperimentConfig(
            k=k,
            horizon=horizon,
            runs=50,
            base_seed=seed,
            algorithm=ALG_E3DR,
            params=E3drParams(
                k=k, delta=0.1, epsilon=0.1, psi=0.2, ee_len=60_000, epoch_len=horizon
            ),
            channels=ChannelSpec(random_blocks=1),
            population=PopulationSchedule(initial_users=4),
            output=OutputSpec(directory=f"out/{name}"),
        )
    dyn_params = E3drParams(
        k=k, delta=0.1, epsilon=0.2, psi=0.25, ee_len=2000, epoch_len=12_000
    )
    rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
    if name == "case1":
        first_leaver = 1 + int(rng.integers(5))
        alive = [u for u in range(1, 6) if u != first_leaver] + [6]
        second_leaver = alive[int(rng.integers(len(alive)))]
        events = (
            PopulationEvent(slot=20_000, kind="departure", user=first_leaver),
            PopulationEvent(slot=45_000, kind="arrival"),
            PopulationEvent(slot=70_000, kind="departure", user=second_leaver),
        )
        return ExperimentConfig(
            k=k,
            horizon=horizon,
            runs=50,
            base_seed=seed,
            algorithm=ALG_E3DR,
            params=dyn_params,
            channels=ChannelSpec(random_blocks=1),
            population=PopulationSchedule(initial_users=5, events=events),
            output=OutputSpec(directory=f"out/{name}"),
        )
    channels = ChannelSpec(random_blocks=3, change_slots=(33_000, 66_000))
    if name == "case2":
        return ExperimentConfig(
            k=k,
            horizon=horizon,
            runs=50,
            base_seed=seed,
            algorithm=ALG_E3DR,
            params=dyn_params,
            channels=channels,
            population=PopulationSchedule(initial_users=4),
            output=OutputSpec(directory=f"out/{name}"),
        )
    first_leaver = 1 + int(rng.integers(5))
    events = (
        PopulationEvent(slot=25_000, kind="departure", user=first_leaver),
        PopulationEvent(slot=50_000, kind="arrival"),
    )
    return ExperimentConfig(
        k=k,
        horizon=horizon,
        runs=50,
        base_seed=seed,
        algorithm=ALG_E3DR,
        params=dyn_params,
        channels=channels,
        population=PopulationSchedule(initial_users=5, events=events),
        output=OutputSpec(directory=f"out/{name}"),
    )


# -- running ----------------------------------------------------------------


@dataclass
class RunOutput:
    run_index: int
    stride: int
    slots: np.ndarray  # recorded slot indices, (i+1)*stride - 1
    regret: np.ndarray  # cumulative regret at those slots
    collisions: np.ndarray  # cumulative collision count at those slots
    final_regret: float
    collisions_by_phase: dict[str, int]
    events: dict[int, list[tuple[int, str]]]
    trace: Optional[RunTrace] = None


def _env_seed(base_seed: int, r: int) -> int:
    return int(np.random.SeedSequence((base_seed, r, 0)).generate_state(1)[0])


def _agent_rng(base_seed: int, r: int, uid: int):
    return np.random.default_rng(np.random.SeedSequence((base_seed, r, 1, uid)))


def _means_rng(base_seed: int, r: int):
    return np.random.default_rng(np.random.SeedSequence((base_seed, r, 2)))


def run_one(cfg: ExperimentConfig, r: int, keep_trace: bool = False) -> RunOutput:
    """One seeded repetition; fully determined by (cfg, r)."""
    process = cfg.channels.build(cfg.k, _means_rng(cfg.base_seed, r))
    env = Environment(process, cfg.population, _env_seed(cfg.base_seed, r))
    params = cfg.params
    if cfg.algorithm == ALG_E3DR:
        make = lambda uid: E3drAgent(params, _agent_rng(cfg.base_seed, r, uid))
        epoch_len = params.epoch_len
    elif cfg.algorithm == ALG_MCTOPM:
        make = lambda uid: McTopMKnownNAgent(cfg.k, _agent_rng(cfg.base_seed, r, uid))
        epoch_len = None
    else:
        make = lambda uid: UniformRandomAgent(cfg.k, _agent_rng(cfg.base_seed, r, uid))
        epoch_len = None
    result = simulate(env, make, cfg.horizon, epoch_len)
    trace = result.trace
    regret = pseudo_regret(trace, process, cfg.population)
    coll_per_slot = np.fromiter(
        (sum(1 for rec in records if rec.collided) for records in trace.slots),
        dtype=np.int64,
        count=trace.horizon,
    )
    coll_cum = np.cumsum(coll_per_slot)
    stride = cfg.output.stride
    idx = np.arange(stride - 1, cfg.horizon, stride)
    return RunOutput(
        run_index=r,
        stride=stride,
        slots=idx,
        regret=regret[idx],
        collisions=coll_cum[idx],
        final_regret=float(regret[-1]),
        collisions_by_phase=collision_count(trace),
        events=result.events,
        trace=trace if keep_trace else None,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    slots: np.ndarray
    mean_regret: np.ndarray
    stderr_regret: np.ndarray
    mean_collisions: np.ndarray
    runs: list[RunOutput]


def run_experiment(
    cfg: ExperimentConfig, jobs: int = 1, keep_traces: bool = False
) -> ExperimentResult:
    """Execute cfg.runs seeded repetitions (optionally across processes;
    results are merged by run index so parallelism never changes them)."""
    indices = list(range(cfg.runs))
    if jobs > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(run_one, [cfg] * cfg.runs, indices))
    else:
        outs = [run_one(cfg, r, keep_trace=keep_traces) for r in indices]
    reg = np.stack([o.regret for o in outs])
    col = np.stack([o.collisions for o in outs])
    stderr = (
        reg.std(axis=0, ddof=1) / math.sqrt(cfg.runs)
        if cfg.runs > 1
        else np.zeros(reg.shape[1])
    )
    return ExperimentResult(
        config=cfg,
        slots=outs[0].slots,
        mean_regret=reg.mean(axis=0),
        stderr_regret=stderr,
        mean_collisions=col.mean(axis=0),
        runs=outs,
    )


def write_outputs(result: ExperimentResult, out_dir: Optional[str] = None) -> dict[str, str]:
    """Write summary.csv, a config echo, and per-run traces when kept.
    Returns the paths written, keyed by kind."""
    cfg = result.config
    out_dir = out_dir or cfg.output.directory
    if out_dir is None:
        raise ConfigError("output.dir: no output directory configured")
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "mean_regret", "stderr_regret", "mean_collisions"])
        for i, slot in enumerate(result.slots):
            w.writerow(
                [
                    int(slot),
                    repr(float(result.mean_regret[i])),
                    repr(float(result.stderr_regret[i])),
                    repr(float(result.mean_collisions[i])),
                ]
            )
    paths["summary"] = summary_path

    echo_path = os.path.join(out_dir, "config.json")
    with open(echo_path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["config"] = echo_path

    for out in result.runs:
        if out.trace is None:
            continue
        trace_path = os.path.join(out_dir, f"trace_r{out.run_index:03d}.csv")
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["slot", "user", "phase", "action_kind", "channel", "reward", "collided"]
            )
            for slot, records in enumerate(out.trace.slots):
                for rec in records:
                    w.writerow(
                        [
                            slot,
                            rec.user,
                            rec.phase,
                            rec.kind,
                            rec.channel if rec.channel is not None else "",
                            repr(rec.reward) if rec.kind == "transmit" else "",
                            int(rec.collided) if rec.kind == "transmit" else "",
                        ]
                    )
        paths[f"trace_r{out.run_index}"] = trace_path
    return paths


def bound_params_for(cfg: ExperimentConfig, c_log: float = 0.0) -> BoundParams:
    """Bound inputs matching a config (arrival/departure totals come from
    the population schedule)."""
    p = cfg.params
    n0 = cfg.population.initial_users
    arrivals = sum(1 for e in cfg.population.events if e.kind == "arrival")
    departures = sum(1 for e in cfg.population.events if e.kind == "departure")
    return BoundParams(
        n_initial=n0,
        k=cfg.k,
        or_len=p.or_len,
        est_len=p.est_len,
        detect_samples=p.detect_samples,
        ee_len=p.ee_len,
        detect_measure_len=p.detect_samples * math.ceil(cfg.k / max(n0, 1)),
        epoch_len=p.epoch_len,
        horizon=cfg.horizon,
        arrivals=arrivals,
        departures=departures,
        c_log=c_log,
    )

"""Command line front end: run experiments, emit scenario configs, print
closed-form bounds."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .harness import (
    ConfigError,
    SCENARIOS,
    bound_params_for,
    load_config,
    run_experiment,
    scenario,
    write_outputs,
)
from .metrics import collision_bound, regret_bound


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.runs is not None:
        cfg = replace(cfg, runs=args.runs)
    if args.horizon is not None:
        cfg = replace(cfg, horizon=args.horizon)
    if args.stride is not None:
        cfg = replace(cfg, output=replace(cfg.output, stride=args.stride))
    if args.traces:
        cfg = replace(cfg, output=replace(cfg.output, write_traces=True))
    result = run_experiment(cfg, jobs=args.jobs, keep_traces=cfg.output.write_traces)
    paths = write_outputs(result, out_dir=args.out)
    print(f"wrote {paths['summary']}")
    print(
        f"final mean regret {result.mean_regret[-1]:.2f} "
        f"(+/- {result.stderr_regret[-1]:.2f}) over {cfg.runs} runs"
    )
    return 0


def _cmd_scenario(args) -> int:
    cfg = scenario(args.name, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.name}.json")
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(path)
    return 0


def _cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    bp = bound_params_for(cfg, c_log=args.c_log)
    print(f"sub-cycles per epoch      {bp.sub_cycles}")
    print(f"single-epoch regret term  {bp.single_epoch_regret:.2f}")
    print(f"regret bound              {regret_bound(bp):.2f}")
    print(f"collision bound           {collision_bound(bp):.2f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="e3dr", description="multi-user channel-allocation experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--runs", type=int, default=None)
    p_run.add_argument("--horizon", type=int, default=None)
    p_run.add_argument("--stride", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--traces", action="store_true")
    p_run.set_defaults(fn=_cmd_run)

    p_sc = sub.add_parser("scenario", help="write a scenario config file")
    p_sc.add_argument("name", choices=SCENARIOS)
    p_sc.add_argument("--seed", type=int, default=1)
    p_sc.add_argument("--out", default="out")
    p_sc.set_defaults(fn=_cmd_scenario)

    p_b = sub.add_parser("bounds", help="print closed-form bound values")
    p_b.add_argument("config")
    p_b.add_argument("--c-log", type=float, default=0.0)
    p_b.set_defaults(fn=_cmd_bounds)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

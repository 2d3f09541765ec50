"""Command-line entry points.

Exit codes: 0 on success, 1 on validation failure, 2 on runtime abort.
SDCPS_SEED overrides the scenario seed; an explicit --seed beats both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .composition import speedup_curve
from .errors import ScenarioSyntaxError, ScenarioValidationError, SdcpsError
from .sandbox import spawn_twin
from .scenario import build_world, parse_scenario, run_scenario


def _load(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_scenario(fh.read())
    except FileNotFoundError:
        print(f"error: no such scenario file: {path}", file=sys.stderr)
        raise SystemExit(1)
    except ScenarioSyntaxError as exc:
        print(f"syntax error: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except ScenarioValidationError as exc:
        print("validation failed:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        raise SystemExit(1)


def _seed_for(scenario, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SDCPS_SEED")
    if env is not None:
        return int(env)
    return scenario.seed


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    scenario.horizon = args.horizon if args.horizon is not None else scenario.horizon
    try:
        world, digest, summary = run_scenario(scenario, seed=_seed_for(scenario, args))
    except SdcpsError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2
    lines = [rec.to_json() for rec in world.metrics]
    lines.append(json.dumps({"summary": summary}, sort_keys=True, separators=(",", ":")))
    payload = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    if args.trace_hash:
        print(f"trace-hash {digest}")
    return 0


def cmd_validate(args) -> int:
    _load(args.scenario)
    print("ok")
    return 0


def cmd_twin_compare(args) -> int:
    scenario = _load(args.scenario)
    horizon = args.horizon if args.horizon is not None else scenario.horizon
    seed = _seed_for(scenario, args)
    try:
        physical = build_world(scenario, seed=seed)
        twin = spawn_twin(physical)
        physical.run(horizon)
        twin.world.run(horizon)
    except SdcpsError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2
    p_hash = physical.trace_hash()
    t_hash = twin.world.trace_hash()
    print(f"physical {p_hash}")
    print(f"twin     {t_hash}")
    if p_hash == t_hash:
        print("fidelity PASS")
        return 0
    print("fidelity FAIL")
    return 2


def cmd_sweep(args) -> int:
    scenario = _load(args.scenario)
    instances = [int(x) for x in args.instances.split(",") if x]
    sweep_opts = scenario.options.get("sweep", {})
    n_tasks = args.tasks if args.tasks is not None else sweep_opts.get("n_tasks", 64)
    cost = args.cost if args.cost is not None else sweep_opts.get("cost", 1)
    rows = speedup_curve(n_tasks, instances, cost)
    out_lines = ["m,makespan,speedup"]
    for m, makespan, speedup in rows:
        out_lines.append(f"{m},{makespan},{speedup:.6g}")
    payload = "\n".join(out_lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdcps")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario to its horizon")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--horizon", type=int)
    p_run.add_argument("--out", help="write metrics JSONL here instead of stdout")
    p_run.add_argument("--trace-hash", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("scenario")
    p_val.set_defaults(fn=cmd_validate)

    p_twin = sub.add_parser("twin-compare", help="check twin fidelity over a horizon")
    p_twin.add_argument("scenario")
    p_twin.add_argument("--horizon", type=int)
    p_twin.add_argument("--seed", type=int)
    p_twin.set_defaults(fn=cmd_twin_compare)

    p_sweep = sub.add_parser("sweep", help="emit the scheduler speedup curve as CSV")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--instances", default="1,2,4,8,16")
    p_sweep.add_argument("--tasks", type=int)
    p_sweep.add_argument("--cost", type=int)
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

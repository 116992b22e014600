"""Command-line entry point: ``rvasim {run,render,attempt,report}``.

Exit codes: 0 success, 1 bad input (flags, config, log schema), 2 runtime
failure. ``--config`` falls back to the ``RVA_CONFIG`` environment
variable, then to built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .errors import RvaError, SimulationError, ValidationError
from .kinematics import RigidTransform
from .procedure import PROBE_DOWN, build_scenario, execute_attempt
from .rng import Stream, stream
from .trials import read_log, render_report, run_batch, write_log
from .ultrasound import render_settled, write_pgm

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError("argv", message)


def _load_config(path) -> RunConfig:
    path = path or os.environ.get("RVA_CONFIG")
    if not path:
        return RunConfig()
    try:
        return parse_config(path)
    except OSError as exc:
        raise ValidationError("config", f"cannot read {path}: {exc.strerror or exc}") from exc


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    t = cfg.trials
    scenario = args.scenario or t.scenario
    n = args.n if args.n is not None else t.n
    seed = args.seed if args.seed is not None else t.base_seed
    if n < 1:
        raise ValidationError("n", "must be >= 1")
    out = args.out or t.out_dir
    records, summary = run_batch(scenario, n, seed, cfg, out_dir=out, workers=args.workers)
    if out:
        write_log(records, Path(out) / t.log_name)
        render_report(records, out)
    print(summary.line())
    return EXIT_OK


def _cmd_render(args) -> int:
    cfg = _load_config(args.config)
    scenario = args.scenario or cfg.trials.scenario
    block = build_scenario(scenario, args.seed, cfg)
    mid = block.vessels[0].midpoint()
    probe = RigidTransform(PROBE_DOWN, [mid[0], mid[1], block.skin_z])
    frame = render_settled(block, probe, cfg.us, stream(args.seed, int(Stream.ULTRASOUND), 0))
    write_pgm(frame, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_attempt(args) -> int:
    cfg = _load_config(args.config)
    scenario = args.scenario or cfg.trials.scenario
    res = execute_attempt(cfg, scenario, args.seed)
    block = build_scenario(scenario, args.seed, cfg)
    v = block.vessels[0]
    print(f"scenario={scenario} seed={args.seed} diameter_mm={v.diameter_mm:.4f} "
          f"depth_mm={block.skin_depth_to_vessel_mm:.4f}")
    for phase, tick in res.log.phase_trace:
        print(f"phase {phase:<20} tick={tick}")
    for ev in res.log.events:
        print("event " + " ".join(str(x) for x in ev))
    if res.final_tip is not None:
        tip = " ".join(f"{x:.4f}" for x in res.final_tip)
        print(f"final_tip_mm {tip}")
    reason = f" reason={res.log.abort_reason}" if res.log.abort_reason else ""
    print(f"outcome={res.log.outcome.value}{reason} blood_return={res.log.outcome.value == 'Success'} "
          f"max_force_n={res.log.max_force_n:.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        records = read_log(args.log)
    except OSError as exc:
        raise ValidationError("log", f"cannot read {args.log}: {exc.strerror or exc}") from exc
    written = render_report(records, args.out, frame_root=Path(args.log).parent)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rvasim", description="Robotic vascular access simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="batch of trials, log and report")
    run.add_argument("--scenario", choices=("phantom", "rat"))
    run.add_argument("--n", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--config")
    run.add_argument("--out")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    render = sub.add_parser("render", help="single ultrasound frame as PGM")
    render.add_argument("--config")
    render.add_argument("--seed", type=int, default=0)
    render.add_argument("--scenario", choices=("phantom", "rat"))
    render.add_argument("--out", required=True)
    render.set_defaults(func=_cmd_render)

    attempt = sub.add_parser("attempt", help="one verbose attempt")
    attempt.add_argument("--config")
    attempt.add_argument("--seed", type=int, default=0)
    attempt.add_argument("--scenario", choices=("phantom", "rat"))
    attempt.set_defaults(func=_cmd_attempt)

    report = sub.add_parser("report", help="summary table and mosaic from a trial log")
    report.add_argument("--log", required=True)
    report.add_argument("--out", required=True)
    report.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, RvaError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

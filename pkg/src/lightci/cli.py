"""Command-line entry point: serve, check, and sim subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import simulator
from .config import ServiceConfig, load_config
from .errors import ConfigError


def _add_spec_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", required=True, help="workload spec JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightci")
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="run the CI daemon")
    serve_p.add_argument("--config", required=True)

    check_p = sub.add_parser("check", help="validate a config file")
    check_p.add_argument("--config", required=True)

    sim_p = sub.add_parser("sim", help="workload simulator")
    sim_sub = sim_p.add_subparsers(dest="sim_command", required=True)

    gen_p = sim_sub.add_parser("generate", help="emit a deterministic trace")
    _add_spec_arg(gen_p)
    gen_p.add_argument("--out", required=True)

    replay_p = sim_sub.add_parser("replay", help="replay a trace under one policy")
    _add_spec_arg(replay_p)
    replay_p.add_argument("--trace", help="trace JSON (generated if omitted)")
    replay_p.add_argument(
        "--policy", choices=[p.value for p in simulator.Policy], required=True
    )
    replay_p.add_argument("--out", required=True, help="metrics JSON output")
    replay_p.add_argument("--config", help="service config for queue bounds")

    compare_p = sim_sub.add_parser("compare", help="run both policies and report savings")
    _add_spec_arg(compare_p)
    compare_p.add_argument("--out", required=True, help="metrics JSON output")
    compare_p.add_argument("--csv", help="optional makespan-curve CSV output")
    compare_p.add_argument("--config", help="service config for queue bounds")
    return parser


def _load_service_config(path: str | None) -> ServiceConfig:
    return load_config(path) if path else ServiceConfig()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        from . import service

        try:
            service.serve(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"bind error: {exc}", file=sys.stderr)
            return 1
        return 0

    if args.command == "check":
        try:
            load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        print("config ok")
        return 0

    if args.command == "sim":
        spec = simulator.WorkloadSpec.load(args.spec)
        if args.sim_command == "generate":
            trace = simulator.generate_trace(spec)
            Path(args.out).write_text(simulator.trace_to_json(trace), encoding="utf-8")
            print(f"wrote {len(trace)} events to {args.out}")
            return 0
        if args.sim_command == "replay":
            config = _load_service_config(args.config)
            if args.trace:
                trace = simulator.trace_from_json(
                    Path(args.trace).read_text(encoding="utf-8")
                )
            else:
                trace = simulator.generate_trace(spec)
            metrics = simulator.replay(
                trace, simulator.Policy(args.policy), config, spec
            )
            simulator.write_metrics(args.out, metrics.as_dict())
            print(json.dumps(metrics.as_dict(), indent=2))
            return 0
        if args.sim_command == "compare":
            config = _load_service_config(args.config)
            report = simulator.compare(spec, config)
            simulator.write_metrics(args.out, report.as_dict())
            if args.csv:
                simulator.write_curve_csv(args.csv, report.curve)
            print(report.table())
            return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``hapticvr <command>`` (or ``python -m hapticvr``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import BenchOptions, bench, compare, format_table
from .device import ConfigurationError, DeviceConfig, RegistrationError, load_device_config, \
    parse_hostport, run_device
from .registry import DEFAULT_PORT, serve
from .runner import FaultConfig, RunOptions, red_cube_demo, run
from .scenario import ScenarioError, load_scenario


def _summary(report) -> str:
    c = report.counters
    lat = report.latency
    line = (f"{report.scenario}: events={c['events']} oks={c['oks']} rejects={c['rejects']} "
            f"malformed={c['malformed']} timeouts={c['timeouts']} not_found={c['not_found']}")
    if not lat.empty:
        line += f"\nlatency ms (actuated-detected): p50={lat.p50:.3f} p99={lat.p99:.3f} max={lat.max:.3f}"
    return line


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    faults = None
    if args.garbage_rate or args.drop_ack_rate:
        faults = FaultConfig(garbage_rate=args.garbage_rate, drop_ack_rate=args.drop_ack_rate)
    opts = RunOptions(
        mode=args.mode,
        registry=parse_hostport(args.registry, DEFAULT_PORT) if args.registry else None,
        faults=faults,
        seed=args.seed,
        realtime=args.realtime,
        device_logs=args.device_log or (),
    )
    report = run(scenario, opts)
    if args.report:
        report.save(args.report)
    print(_summary(report))
    return 0


def cmd_demo(args) -> int:
    report = red_cube_demo(RunOptions(realtime=args.realtime))
    if args.report:
        report.save(args.report)
    print(_summary(report))
    for uid, records in report.timelines.items():
        for r in records:
            print(f"user {uid}: motor {r['motor_channel']} vibrated "
                  f"{r['end_ms'] - r['start_ms']:.0f} ms (seq {r['seq']})")
    return 0


def cmd_serve(args) -> int:
    serve((args.host, args.port), idle_timeout=args.idle_timeout, relay=args.relay)
    return 0


def cmd_device(args) -> int:
    try:
        overrides = dict(user_id=args.user_id, port=args.port, log_path=args.log,
                         host=args.host, pulse_ms=args.pulse_ms, overlap_policy=args.overlap)
        if args.server:
            overrides["server"] = parse_hostport(args.server, DEFAULT_PORT)
        if args.config:
            config = load_device_config(args.config, **overrides)
        else:
            if args.user_id is None:
                print("error: --user-id or --config is required", file=sys.stderr)
                return 2
            config = DeviceConfig(**{k: v for k, v in overrides.items() if v is not None})
        run_device(config, register=not args.no_register)
    except (ConfigurationError, RegistrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    opts = BenchOptions(avatars=args.avatars, rate=args.rate, duration=args.duration,
                        mode=args.mode, keep_alive=args.keep_alive, retries=args.retries,
                        seed=args.seed)
    results = compare(opts) if args.compare else [bench(opts)]
    if args.json:
        print(json.dumps([r.row() for r in results], indent=1))
    else:
        print(format_table(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hapticvr", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file end to end")
    r.add_argument("scenario")
    r.add_argument("--mode", choices=("direct", "relay"), default="direct")
    r.add_argument("--registry", help="host:port of an external registry (devices must be running)")
    r.add_argument("--report", help="write the JSON run report here")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--realtime", action="store_true", help="pace ticks at wall-clock rate")
    r.add_argument("--garbage-rate", type=float, default=0.0)
    r.add_argument("--drop-ack-rate", type=float, default=0.0)
    r.add_argument("--device-log", action="append",
                   help="JSONL log of an external device, joined into the report")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("serve-registry", help="run the central registry server")
    s.add_argument("--host", default="0.0.0.0")
    s.add_argument("--port", type=int, default=DEFAULT_PORT)
    s.add_argument("--idle-timeout", type=float, default=5.0)
    s.add_argument("--relay", action="store_true", help="also forward CollisionEvents to devices")
    s.set_defaults(func=cmd_serve)

    d = sub.add_parser("device", help="run one emulated haptic kit")
    d.add_argument("--user-id", type=int)
    d.add_argument("--port", type=int, help="listen port (default 4210 + user id)")
    d.add_argument("--host", default=None)
    d.add_argument("--config", help="device JSON config")
    d.add_argument("--server", help="registry host:port (default 127.0.0.1:4210)")
    d.add_argument("--pulse-ms", type=float)
    d.add_argument("--overlap", choices=("RESTART", "EXTEND"))
    d.add_argument("--log", help="append line-delimited JSON events here")
    d.add_argument("--no-register", action="store_true")
    d.set_defaults(func=cmd_device)

    b = sub.add_parser("bench", help="synthetic latency/throughput benchmark")
    b.add_argument("--avatars", type=int, default=2)
    b.add_argument("--rate", type=float, default=10.0, help="events per second")
    b.add_argument("--duration", type=float, default=10.0, help="seconds")
    b.add_argument("--mode", choices=("direct", "relay"), default="direct")
    b.add_argument("--keep-alive", action="store_true")
    b.add_argument("--compare", action="store_true", help="per-event vs keep-alive side by side")
    b.add_argument("--retries", type=int, default=0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)

    demo = sub.add_parser("demo-red-cube", help="reach into the red cube; one hand buzz")
    demo.add_argument("--report")
    demo.add_argument("--realtime", action="store_true")
    demo.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

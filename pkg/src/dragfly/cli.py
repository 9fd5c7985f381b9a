"""Command-line front end: serve a live session, record scripted runs, replay traces."""

from __future__ import annotations

import argparse
import sys


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dragfly",
        description="Human-drone shared-control simulator: variable admittance "
                    "control + local RRT* + obstacle force field.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run a live session and accept network clients")
    p_serve.add_argument("--scenario", required=True, help="scenario JSON file")
    p_serve.add_argument("--port", type=int, default=8750, help="TCP port (default 8750)")
    p_serve.add_argument("--ws-port", type=int, default=None,
                         help="also serve the protocol over WebSocket on this port")
    p_serve.add_argument("--record", metavar="TRACE", default=None,
                         help="save a trace of the session on shutdown")
    p_serve.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="config override, e.g. admittance.k_p=12")

    p_record = sub.add_parser("record", help="run a scenario's scripted inputs headless "
                                             "and save the trace")
    p_record.add_argument("--scenario", required=True)
    p_record.add_argument("--trace", required=True, help="output trace file")
    p_record.add_argument("--report", default=None, help="also write a report directory")
    p_record.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE")

    p_replay = sub.add_parser("replay", help="replay a trace and verify per-tick digests")
    p_replay.add_argument("--scenario", required=True)
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--report", required=True, help="report output directory")
    p_replay.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE")

    args = parser.parse_args(argv)

    if args.command == "serve":
        from .gateway import serve
        from .scenario import ScenarioError, load_scenario
        try:
            scenario = load_scenario(args.scenario, args.overrides)
        except ScenarioError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        serve(scenario, args.port, ws_port=args.ws_port, record_trace_path=args.record)
        return 0

    if args.command == "record":
        from .gateway import run_scripted
        from .scenario import ScenarioError, load_scenario
        from .tracefile import save_trace
        try:
            scenario = load_scenario(args.scenario, args.overrides)
        except ScenarioError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        session, trace = run_scripted(scenario)
        save_trace(trace, args.trace)
        m = session.metrics()
        print(f"recorded {m.ticks} ticks ({m.duration:.1f} s) to {args.trace}; "
              f"rmse={m.rmse:.4f} m, completed={m.completed}")
        if args.report:
            from .report import write_report
            write_report(session, args.report, scenario.env, scenario.name)
            print(f"report written to {args.report}")
        return 0

    if args.command == "replay":
        from .gateway import run_headless
        return run_headless(args.scenario, args.trace, args.report, args.overrides)

    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: run and validate scenarios, benchmark, serve.

Exit codes: 0 success, 1 expectations or determinism failed, 2 the
scenario could not be loaded or arguments were unusable.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
from collections import deque

from .clock import NS_PER_MS, MonotonicClock
from .control import ControlService
from .errors import KernelError, ValidationError
from .harness import RunReport, bench, run_scenario
from .scenario import build_kernel, load_scenario


def _print_problems(exc: ValidationError) -> None:
    print("scenario is invalid:", file=sys.stderr)
    for problem in exc.problems:
        print(f"  - {problem}", file=sys.stderr)


def _print_report(report: RunReport) -> None:
    print(f"scenario: {report.scenario} (seed {report.seed}, horizon {report.horizon_ns // NS_PER_MS} ms)")
    auto = report.metrics["autonomous"]
    print(f"  wall: {report.wall_elapsed_ms:.1f} ms")
    print(
        f"  steps: {auto['run_steps']}  interrupts: {auto['interrupts_raised']}  "
        f"directives: {len(report.decision_log)}  weight recomputes: {report.metrics['weights_recomputed']}"
    )
    for rejection in report.rejected_ingests:
        print(f"  rejected ingest on {rejection['adapter_id']}: {rejection['reason']}")
    for result in report.expectation_results:
        mark = "PASS" if result.ok else "FAIL"
        print(f"  [{mark}] {result.kind}: {result.detail}")
    passed = sum(1 for r in report.expectation_results if r.ok)
    verdict = "PASS" if report.ok else "FAIL"
    print(f"result: {verdict} ({passed}/{len(report.expectation_results)} expectations)")


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValidationError) as exc:
        if isinstance(exc, ValidationError):
            _print_problems(exc)
        else:
            print(f"cannot read {args.scenario}: {exc}", file=sys.stderr)
        return 2
    report = run_scenario(scenario)
    if args.json:
        print(json.dumps(report.to_obj(), indent=2, sort_keys=True))
    else:
        _print_report(report)
    return 0 if report.ok else 1


def _cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValidationError) as exc:
        if isinstance(exc, ValidationError):
            _print_problems(exc)
        else:
            print(f"cannot read {args.scenario}: {exc}", file=sys.stderr)
        return 2
    print(
        f"ok: {scenario.name} ({len(scenario.registry)} modules, "
        f"{len(scenario.events)} events, {len(scenario.expectations)} expectations)"
    )
    return 0


def _cmd_bench(args) -> int:
    report = bench(seed=args.seed)
    if args.json:
        print(json.dumps(report.to_obj(), indent=2, sort_keys=True))
        return 0 if report.ok else 1
    obj = report.to_obj()
    print(f"benchmark: {report.run.scenario} (seed {report.seed})")
    print(f"  deterministic: {'yes' if report.deterministic else 'NO'}")
    stats = obj["switch_wall_latency"]
    if stats:
        print(
            f"  switches: {stats['count']}  wall p50: {stats['p50_ms']:.2f} ms  "
            f"wall max: {stats['max_ms']:.2f} ms"
        )
    for result in report.run.expectation_results:
        mark = "PASS" if result.ok else "FAIL"
        print(f"  [{mark}] {result.kind}: {result.detail}")
    print(f"result: {'PASS' if report.ok else 'FAIL'}")
    return 0 if report.ok else 1


def _cmd_serve(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValidationError) as exc:
        if isinstance(exc, ValidationError):
            _print_problems(exc)
        else:
            print(f"cannot read {args.scenario}: {exc}", file=sys.stderr)
        return 2
    kernel = build_kernel(scenario, clock=MonotonicClock())
    try:
        service = ControlService(
            kernel, args.admin_token, args.viewer_token, host=args.host, port=args.port
        )
    except KernelError as exc:
        print(f"cannot start control service: {exc}", file=sys.stderr)
        return 2
    service.start()
    host, port = service.address
    print(f"serving {scenario.name} on {host}:{port}", flush=True)

    stop = threading.Event()

    def request_stop(signum, frame):
        stop.set()

    try:
        signal.signal(signal.SIGINT, request_stop)
        signal.signal(signal.SIGTERM, request_stop)
    except ValueError:
        pass
    pending = deque(scenario.events)
    try:
        while not stop.is_set():
            kernel.catch_up()
            while pending and kernel.clock.now_ns() >= pending[0].at_ns:
                event = pending.popleft()
                kernel.inject(event.adapter_id, event.payload)
            stop.wait(0.01)
    finally:
        service.stop()
    print("stopped")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ogi", description="desk-scale cognitive kernel runtime"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and check its expectations")
    run_p.add_argument("scenario", help="path to a scenario JSON document")
    run_p.add_argument("--json", action="store_true", help="emit the full report as JSON")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="validate a scenario document")
    val_p.add_argument("scenario", help="path to a scenario JSON document")
    val_p.set_defaults(func=_cmd_validate)

    bench_p = sub.add_parser("bench", help="run the switching benchmark twice and compare")
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--json", action="store_true", help="emit the full report as JSON")
    bench_p.set_defaults(func=_cmd_bench)

    serve_p = sub.add_parser("serve", help="serve a scenario kernel over the control protocol")
    serve_p.add_argument("scenario", help="path to a scenario JSON document")
    serve_p.add_argument("--admin-token", required=True)
    serve_p.add_argument("--viewer-token", required=True)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=0)
    serve_p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Scenario harness: deterministic runs, expectation checks, benchmark.

run_scenario() plays a scenario's timed injections against a fresh
kernel on a virtual clock and evaluates the document's expectations.
bench() runs the built-in process-switching workload twice with the
same seed and verifies the two runs are byte-identical, then reports
switching latency statistics from the first run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .autonomous import StoredProcedure
from .clock import NS_PER_MS
from .dps import ExternalProgram, ModuleRegistry, ModuleSpec
from .fabric import FabricConfig
from .io_integration import ActionDescriptor, AdapterDescriptor, Direction
from .modality import ModalityKind, ModalityPayload, canonical_json
from .scenario import Expectation, InjectEvent, LtmSeed, Scenario, build_kernel


@dataclass(frozen=True)
class ExpectationResult:
    kind: str
    ok: bool
    detail: str

    def to_obj(self) -> dict:
        return {"kind": self.kind, "ok": self.ok, "detail": self.detail}


@dataclass
class RunReport:
    scenario: str
    seed: int
    horizon_ns: int
    wall_elapsed_ms: float
    metrics: dict
    decision_log: list
    interrupts: list
    rejected_ingests: list
    expectation_results: list

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.expectation_results)

    def to_obj(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "horizon_ns": self.horizon_ns,
            "wall_elapsed_ms": self.wall_elapsed_ms,
            "ok": self.ok,
            "metrics": self.metrics,
            "decision_log": self.decision_log,
            "interrupts": self.interrupts,
            "rejected_ingests": self.rejected_ingests,
            "expectations": [r.to_obj() for r in self.expectation_results],
        }


def _metric_at(metrics: dict, path: str):
    node = metrics
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _directive_count(decision_log: list, kind: str) -> int:
    return sum(1 for d in decision_log if d["kind"] == kind)


def evaluate_expectation(exp: Expectation, metrics: dict, decision_log: list) -> ExpectationResult:
    params = exp.params
    if exp.kind == "interrupt-count":
        got = _metric_at(metrics, "autonomous.interrupts_raised")
        want = params.get("equals")
        ok = got == want
        return ExpectationResult(exp.kind, ok, f"interrupts raised = {got}, expected {want}")
    if exp.kind == "directive-count":
        kind = params["directive"]
        got = _directive_count(decision_log, kind)
        checks = []
        ok = True
        if "equals" in params:
            ok = ok and got == params["equals"]
            checks.append(f"expected {params['equals']}")
        if "min" in params:
            ok = ok and got >= params["min"]
            checks.append(f"min {params['min']}")
        if "max" in params:
            ok = ok and got <= params["max"]
            checks.append(f"max {params['max']}")
        return ExpectationResult(exp.kind, ok, f"{kind} directives = {got} ({', '.join(checks)})")
    if exp.kind == "metric-bound":
        path = params["path"]
        got = _metric_at(metrics, path)
        if not isinstance(got, (int, float)):
            return ExpectationResult(exp.kind, False, f"metric {path!r} not found")
        ok = True
        bounds = []
        if "min" in params:
            ok = ok and got >= params["min"]
            bounds.append(f">= {params['min']}")
        if "max" in params:
            ok = ok and got <= params["max"]
            bounds.append(f"<= {params['max']}")
        return ExpectationResult(exp.kind, ok, f"{path} = {got} (want {' and '.join(bounds)})")
    if exp.kind == "goal-complete":
        got = _directive_count(decision_log, "Complete") > 0
        want = bool(params.get("equals", True))
        return ExpectationResult(exp.kind, got == want, f"goal completed = {got}, expected {want}")
    return ExpectationResult(exp.kind, False, f"unknown expectation kind {exp.kind!r}")


def run_scenario(scenario: Scenario) -> RunReport:
    kernel = build_kernel(scenario)
    interrupts: list = []
    kernel.subscribe_telemetry(
        lambda e: interrupts.append(e) if e.get("event") == "interrupt" else None
    )
    rejected: list = []
    wall_start = time.perf_counter()
    for event in scenario.events:
        kernel.advance_to(event.at_ns)
        receipt = kernel.inject(event.adapter_id, event.payload)
        if not receipt.accepted:
            rejected.append({"at_ns": event.at_ns, "adapter_id": event.adapter_id, "reason": receipt.reason})
    kernel.advance_to(scenario.horizon_ns)
    wall_elapsed_ms = (time.perf_counter() - wall_start) * 1000.0
    metrics = kernel.metrics()
    decision_log = kernel.decision_log_objs()
    results = [evaluate_expectation(e, metrics, decision_log) for e in scenario.expectations]
    return RunReport(
        scenario=scenario.name,
        seed=scenario.seed,
        horizon_ns=scenario.horizon_ns,
        wall_elapsed_ms=wall_elapsed_ms,
        metrics=metrics,
        decision_log=decision_log,
        interrupts=interrupts,
        rejected_ingests=rejected,
        expectation_results=results,
    )


# --- built-in switching benchmark ------------------------------------------

SWITCH_FLIP_MS = (500, 1000, 1500, 2000, 2500)
SWITCH_HORIZON_MS = 3000


def switching_scenario(seed: int = 0) -> Scenario:
    """Two procedures tied to a mode sensor that flips five times."""
    registry = ModuleRegistry(
        [
            ModuleSpec("analysis", frozenset({ModalityKind.NUMERIC})),
            ModuleSpec("motor", frozenset({ModalityKind.TEXT, ModalityKind.NUMERIC})),
        ]
    )
    program = ExternalProgram(
        version=1,
        primary_goal="hold the active mode",
        instructions=(),
        base_log_weights=(0.0, 0.0),
        interrupt_threshold=0.5,
    )
    def act(note):
        return ActionDescriptor("act", ModalityPayload.of_text(note))

    low = StoredProcedure(
        proc_id="proc-low",
        trigger={"mode.mean": 0.1},
        expected={"mode.mean": 0.1},
        steps=(act("hold-low"),),
        loop=True,
        max_iterations=100000,
    )
    high = StoredProcedure(
        proc_id="proc-high",
        trigger={"mode.mean": 0.9},
        expected={"mode.mean": 0.9},
        steps=(act("hold-high"),),
        loop=True,
        max_iterations=100000,
    )
    adapters = (
        AdapterDescriptor("mode", Direction.INPUT, ModalityKind.NUMERIC),
        AdapterDescriptor("act", Direction.OUTPUT, ModalityKind.TEXT),
    )
    seeds = (
        LtmSeed(ModalityPayload.of_text("procedure:proc-high"), {"mode.mean": 0.9}, 0.9),
        LtmSeed(ModalityPayload.of_text("procedure:proc-low"), {"mode.mean": 0.1}, 0.9),
    )
    events = [InjectEvent(0, "mode", ModalityPayload.of_numeric([0.1]))]
    level = 0.9
    for at_ms in SWITCH_FLIP_MS:
        events.append(InjectEvent(at_ms * NS_PER_MS, "mode", ModalityPayload.of_numeric([level])))
        level = 0.1 if level == 0.9 else 0.9
    flips = len(SWITCH_FLIP_MS)
    expectations = (
        Expectation("interrupt-count", {"equals": flips}),
        Expectation("directive-count", {"directive": "TakeOver", "equals": flips}),
        Expectation("directive-count", {"directive": "DispatchProcedure", "equals": flips}),
        Expectation("metric-bound", {"path": "fabric.faulted", "max": 0}),
    )
    return Scenario(
        name="switching-bench",
        description="alternating mode procedure switching workload",
        seed=seed,
        horizon_ns=SWITCH_HORIZON_MS * NS_PER_MS,
        registry=registry,
        program=program,
        adapters=adapters,
        procedures=(low, high),
        ltm_seeds=seeds,
        events=tuple(events),
        fabric=FabricConfig(seed=seed),
        expectations=expectations,
    )


@dataclass
class BenchReport:
    seed: int
    deterministic: bool
    run: RunReport
    switch_wall_ns: list
    switch_virtual_ns: list

    @property
    def ok(self) -> bool:
        return self.deterministic and self.run.ok

    def to_obj(self) -> dict:
        wall = sorted(self.switch_wall_ns)
        stats = {}
        if wall:
            stats = {
                "count": len(wall),
                "p50_ms": wall[len(wall) // 2] / NS_PER_MS,
                "max_ms": wall[-1] / NS_PER_MS,
            }
        return {
            "seed": self.seed,
            "ok": self.ok,
            "deterministic": self.deterministic,
            "switch_wall_latency": stats,
            "switch_virtual_ns": self.switch_virtual_ns,
            "run": self.run.to_obj(),
        }


def _fingerprint(report: RunReport, trace) -> str:
    return canonical_json(
        {
            "decisions": report.decision_log,
            "interrupts": [
                {k: v for k, v in e.items() if k != "wall_staged_ns"} for e in report.interrupts
            ],
            "weights": [list(w.weights) for w in trace],
            "counts": report.metrics["autonomous"],
            "fabric_accepted": report.metrics["fabric"]["accepted"],
        }
    )


def bench(seed: int = 0) -> BenchReport:
    scenario = switching_scenario(seed)
    kernel_holder = {}

    def run_once():
        kernel = build_kernel(scenario)
        kernel_holder["kernel"] = kernel
        interrupts = []
        kernel.subscribe_telemetry(
            lambda e: interrupts.append(e) if e.get("event") == "interrupt" else None
        )
        wall_start = time.perf_counter()
        for event in scenario.events:
            kernel.advance_to(event.at_ns)
            kernel.inject(event.adapter_id, event.payload)
        kernel.advance_to(scenario.horizon_ns)
        elapsed = (time.perf_counter() - wall_start) * 1000.0
        metrics = kernel.metrics()
        decision_log = kernel.decision_log_objs()
        report = RunReport(
            scenario=scenario.name,
            seed=seed,
            horizon_ns=scenario.horizon_ns,
            wall_elapsed_ms=elapsed,
            metrics=metrics,
            decision_log=decision_log,
            interrupts=interrupts,
            rejected_ingests=[],
            expectation_results=[
                evaluate_expectation(e, metrics, decision_log) for e in scenario.expectations
            ],
        )
        return _fingerprint(report, kernel.weight_trace), report

    first_print, first = run_once()
    first_kernel = kernel_holder["kernel"]
    second_print, _ = run_once()
    latencies = first_kernel.executive.takeover_latencies
    return BenchReport(
        seed=seed,
        deterministic=first_print == second_print,
        run=first,
        switch_wall_ns=[entry["wall_ns"] for entry in latencies],
        switch_virtual_ns=[entry["virtual_ns"] for entry in latencies],
    )

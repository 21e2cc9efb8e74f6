"""Kernel integration: wiring, settle loop, determinism, live takeover path."""

import json
import time

from ogi.autonomous import StoredProcedure
from ogi.clock import NS_PER_MS, NS_PER_S, MonotonicClock, VirtualClock
from ogi.dps import ExternalProgram, ModuleRegistry, ModuleSpec, ProfileId
from ogi.executive import DirectiveKind
from ogi.fabric import FabricConfig
from ogi.io_integration import ActionDescriptor, AdapterDescriptor, Direction
from ogi.kernel import Kernel
from ogi.memory import INTERRUPT_PREFIX, STATUS_KEY
from ogi.modality import FabricFrame, ModalityKind, ModalityPayload, Priority


def legs(note):
    return ActionDescriptor("legs", ModalityPayload.of_text(note))


def trail_kernel(seed=0, clock=None, fabric_config=None):
    registry = ModuleRegistry(
        [
            ModuleSpec("text-proc", frozenset({ModalityKind.TEXT})),
            ModuleSpec("num-proc", frozenset({ModalityKind.NUMERIC})),
            ModuleSpec("motor-proc", frozenset({ModalityKind.TEXT, ModalityKind.NUMERIC})),
        ]
    )
    program = ExternalProgram(
        version=1,
        primary_goal="follow the trail",
        instructions=(),
        base_log_weights=(0.0, 0.0, 0.0),
        interrupt_threshold=0.5,
    )
    walk = StoredProcedure(
        proc_id="walk-the-trail",
        trigger={"trail.Text": 1.0},
        expected={"trail.Text": 1.0, "obstacle.Numeric": 1.0, "obstacle.mean": 0.0},
        steps=(legs("left"), legs("right"), legs("scan")),
        loop=True,
        max_iterations=100000,
    )
    assess = StoredProcedure(
        proc_id="stop-and-assess",
        trigger={"obstacle.mean": 0.9},
        expected={"obstacle.mean": 0.9},
        steps=(legs("halt"), legs("look")),
        loop=False,
    )
    adapters = [
        AdapterDescriptor("trail", Direction.INPUT, ModalityKind.TEXT),
        AdapterDescriptor("obstacle", Direction.INPUT, ModalityKind.NUMERIC),
        AdapterDescriptor("legs", Direction.OUTPUT, ModalityKind.TEXT),
    ]
    kernel = Kernel(
        registry, program, [walk, assess], adapters,
        seed=seed, clock=clock, fabric_config=fabric_config,
    )
    kernel.ltm.store(
        ModalityPayload.of_text("procedure:stop-and-assess"),
        {"trail.Text": 1.0, "obstacle.Numeric": 1.0, "obstacle.mean": 0.9},
        0.9,
    )
    return kernel


def run_trail(kernel, obstacle=True):
    kernel.inject("trail", ModalityPayload.of_text("blazes ahead"))
    kernel.inject("obstacle", ModalityPayload.of_numeric([0.0]))
    kernel.advance_to(2 * NS_PER_S)
    if obstacle:
        kernel.inject("obstacle", ModalityPayload.of_numeric([0.9]))
    kernel.advance_to(3 * NS_PER_S)


def test_trail_interrupt_path_end_to_end():
    kernel = trail_kernel()
    run_trail(kernel, obstacle=True)
    assert kernel.autonomous.interrupts_raised == 1
    assert kernel.interrupts_staged == 1
    assert kernel.takeover_count() == 1
    kinds = [d.kind for d in kernel.executive.decision_log]
    assert kinds.count(DirectiveKind.TAKE_OVER) == 1
    assert kinds.count(DirectiveKind.DISPATCH_PROCEDURE) == 1
    dispatch = next(d for d in kernel.executive.decision_log if d.kind is DirectiveKind.DISPATCH_PROCEDURE)
    assert dispatch.argument["proc_id"] == "stop-and-assess"
    entry = kernel.stm.get(INTERRUPT_PREFIX + "int-1")
    assert entry.payload["handled"] is True
    assert abs(entry.payload["divergence"] - 0.9) <= 1e-12
    assert kernel.weighting.active_profile is ProfileId.LOGICAL
    # takeover happened within the same settle instant
    assert kernel.executive.takeover_latencies[0]["virtual_ns"] == 0
    assert kernel.executive.takeover_latencies[0]["wall_ns"] < 10 * NS_PER_MS


def test_trail_without_obstacle_stays_quiet():
    kernel = trail_kernel()
    run_trail(kernel, obstacle=False)
    assert kernel.autonomous.interrupts_raised == 0
    assert kernel.takeover_count() == 0
    assert kernel.autonomous.run.proc_id == "walk-the-trail"
    assert kernel.autonomous.run_step_calls > 200
    assert kernel.executive.decision_log == []


def test_determinism_same_seed_same_everything():
    def run(seed):
        kernel = trail_kernel(seed=seed)
        run_trail(kernel)
        return (
            json.dumps(kernel.decision_log_objs(), sort_keys=True),
            json.dumps([list(w.weights) for w in kernel.weight_trace]),
            kernel.metrics()["autonomous"],
            kernel.metrics()["fabric"]["accepted"],
        )

    first = run(7)
    second = run(7)
    assert first == second


def test_settle_applies_cascades_within_one_instant():
    kernel = trail_kernel()
    kernel.inject("trail", ModalityPayload.of_text("go"))
    kernel.inject("obstacle", ModalityPayload.of_numeric([0.0]))
    kernel.advance_to(10 * NS_PER_MS)
    # the first autonomous step already ran and reported at 10ms
    assert kernel.autonomous.run_step_calls == 1
    assert kernel.stm.get(STATUS_KEY).payload["proc_id"] == "walk-the-trail"


def test_weights_refresh_on_program_and_profile_changes():
    kernel = trail_kernel()
    before = kernel.current_weights()
    assert before.program_version == 1
    next_program = ExternalProgram(
        version=2,
        primary_goal="follow the trail",
        instructions=(),
        base_log_weights=(1.5, 0.0, 0.0),
        interrupt_threshold=0.5,
    )
    kernel.put_program(next_program)
    after = kernel.current_weights()
    assert after.program_version == 2
    assert after.weights[0] > before.weights[0]
    audit_outcomes = [r["outcome"] for r in kernel.audit.records()]
    assert "accepted" in audit_outcomes
    # unchanged inputs do not recompute
    trace_len = len(kernel.weight_trace)
    kernel.current_weights()
    assert len(kernel.weight_trace) == trace_len


def test_routing_follows_weights():
    kernel = trail_kernel()
    table = kernel.routing_table()
    for kind in ModalityKind:
        targets = table.targets_for(kind)
        assert targets, "routing must never be empty"
        assert set(targets) <= {"text-proc", "num-proc", "motor-proc"}


def test_telemetry_stream_carries_events():
    kernel = trail_kernel()
    events = []
    unsubscribe = kernel.subscribe_telemetry(events.append)
    run_trail(kernel)
    kinds = {e["event"] for e in events}
    assert {"weights", "interrupt", "directive"} <= kinds
    interrupt_events = [e for e in events if e["event"] == "interrupt"]
    assert len(interrupt_events) == 1
    assert abs(interrupt_events[0]["divergence"] - 0.9) <= 1e-12
    unsubscribe()
    count = len(events)
    kernel.put_program(
        ExternalProgram(
            version=2, primary_goal="g", instructions=(),
            base_log_weights=(0.0, 0.0, 0.0),
        )
    )
    assert len(events) == count


def test_stream_fault_staged_for_executive():
    kernel = trail_kernel(fabric_config=FabricConfig(gap_budget=2, seed=0))
    base = dict(
        source="text-proc",
        destinations=frozenset({"num-proc"}),
        stream_id="side",
        priority=Priority.DATA,
        sent_at_ns=0,
    )
    kernel.fabric.send(FabricFrame(frame_id="f1", seq=1, payload=ModalityPayload.of_text("a"), **base))
    kernel.fabric.send(FabricFrame(frame_id="f3", seq=3, payload=ModalityPayload.of_text("c"), **base))
    kernel.fabric.send(FabricFrame(frame_id="f4", seq=4, payload=ModalityPayload.of_text("d"), **base))
    kernel.fabric.send(FabricFrame(frame_id="f5", seq=5, payload=ModalityPayload.of_text("e"), **base))
    kernel.settle()
    assert kernel.stream_faults_staged == 1
    entry = kernel.stm.get("fault.1")
    assert entry is not None
    assert entry.payload["missing_from_seq"] == 2
    kernel.fabric.check_conservation()


def test_live_clock_catch_up():
    kernel = trail_kernel(clock=MonotonicClock())
    kernel.inject("trail", ModalityPayload.of_text("go"))
    kernel.inject("obstacle", ModalityPayload.of_numeric([0.0]))
    deadline = time.monotonic() + 2.0
    while kernel.autonomous.run_step_calls < 3 and time.monotonic() < deadline:
        time.sleep(0.005)
        kernel.catch_up()
    assert kernel.autonomous.run_step_calls >= 3
    kernel.inject("obstacle", ModalityPayload.of_numeric([0.9]))
    deadline = time.monotonic() + 2.0
    while kernel.takeover_count() < 1 and time.monotonic() < deadline:
        time.sleep(0.005)
        kernel.catch_up()
    assert kernel.autonomous.interrupts_raised == 1
    assert kernel.takeover_count() == 1


def test_metrics_shape():
    kernel = trail_kernel()
    run_trail(kernel)
    m = kernel.metrics()
    assert m["stm"]["occupancy"] <= 256
    assert m["autonomous"]["interrupts_raised"] == 1
    assert m["executive"]["directives"]["TakeOver"] == 1
    assert m["fabric"]["accepted"] == m["fabric"]["delivered"] + m["fabric"]["pending"] + m["fabric"]["faulted"]
    assert m["io"]["legs"]["emitted"] > 0

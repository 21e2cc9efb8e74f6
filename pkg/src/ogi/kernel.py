"""Kernel assembly: wiring, the settle loop, and the event timeline.

A kernel owns one of everything (clock, fabric, memories, weighting,
autonomous area, executive, io layer) and runs them on a single timeline.
At any instant, settle() repeats a fixed cycle until nothing changes:

    pump the fabric -> process autonomous dispatches -> executive tick
    -> refresh weights

so every cause at an instant has its effects applied before time moves on.
Between instants, advance_to() fires the two periodic cadences (autonomous
steps and executive heartbeats) in deterministic order. On a virtual clock
the whole construction replays byte-identically for a given seed; in live
mode the same code runs against a monotonic clock with catch_up() called
from a pump thread, and every public operation takes the kernel lock.

The kernel is also where interrupt frames become short-term memory entries:
delivery to the executive endpoint stages the record, and the executive
finds it in its snapshot. That staging path is what keeps the executive's
inputs limited to memory, program, interrupts, and recalls.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Callable, Optional, Sequence

from . import config as defaults
from .autonomous import AutonomousArea, StoredProcedure
from .clock import VirtualClock
from .dps import (
    AdminIdentity,
    AuditLog,
    ExternalProgram,
    ModuleRegistry,
    OperationalProfile,
    ProfileId,
    RoutingTable,
    WeightVector,
    WeightingSystem,
)
from .errors import ConfigurationError
from .executive import Executive, Policy, rule_table_policy
from .fabric import Fabric, FabricConfig, StreamSender
from .io_integration import AdapterDescriptor, IngestReceipt, IoIntegration
from .memory import INTERRUPT_PREFIX, LongTermMemory, ShortTermMemory, StmEntry
from .modality import ControlBody, FabricFrame, ModalityKind, ModalityPayload, Priority

log = logging.getLogger(__name__)

SETTLE_BOUND = 1000


class SimulatedProcessor:
    """Stand-in for a specialized module: counts what the fabric feeds it."""

    def __init__(self, module_id: str):
        self.module_id = module_id
        self.by_kind: dict[str, int] = {}
        self.control_frames = 0

    def on_frame(self, frame: FabricFrame, record) -> None:
        if isinstance(frame.payload, ModalityPayload):
            kind = frame.payload.kind.value
            self.by_kind[kind] = self.by_kind.get(kind, 0) + 1
        else:
            self.control_frames += 1


class Kernel:
    def __init__(
        self,
        registry: ModuleRegistry,
        program: ExternalProgram,
        procedures: Sequence[StoredProcedure] = (),
        adapters: Sequence[AdapterDescriptor] = (),
        profiles: Optional[dict[ProfileId, OperationalProfile]] = None,
        fabric_config: Optional[FabricConfig] = None,
        clock=None,
        stm_capacity: int = defaults.STM_CAPACITY,
        consolidation_threshold: float = defaults.CONSOLIDATION_THRESHOLD,
        match_threshold: float = defaults.MATCH_THRESHOLD,
        fail_budget: int = defaults.STEP_FAIL_BUDGET,
        step_interval_ns: int = defaults.STEP_INTERVAL_NS,
        heartbeat_ns: int = defaults.HEARTBEAT_NS,
        policy: Policy = rule_table_policy,
        seed: int = 0,
    ):
        self.clock = clock if clock is not None else VirtualClock()
        self.lock = threading.RLock()
        self.seed = seed
        self.audit = AuditLog(self.clock)
        self.admin_identity = AdminIdentity()

        self.fabric = Fabric(fabric_config or FabricConfig(seed=seed), self.clock)
        for module in registry:
            self.fabric.register_endpoint(module.module_id)
        self.fabric.register_endpoint("executive")
        self.fabric.register_endpoint("autonomous")

        self.ltm = LongTermMemory(self.clock)
        self.stm = ShortTermMemory(
            self.clock,
            capacity=stm_capacity,
            consolidation_threshold=consolidation_threshold,
            consolidator=lambda entry: self._consolidate(entry),
        )
        self.weighting = WeightingSystem(
            registry, program, self.admin_identity, self.clock, self.audit, profiles
        )
        self.io = IoIntegration(
            self.fabric, self.stm, self.clock, routing_targets=self._routing_targets
        )
        self.autonomous = AutonomousArea(
            self.stm,
            self.io,
            StreamSender(self.fabric, "autonomous", "alerts"),
            self.clock,
            procedures,
            interrupt_threshold=self.weighting.interrupt_threshold,
            match_threshold=match_threshold,
            fail_budget=fail_budget,
        )
        self.executive = Executive(
            self.stm,
            self.ltm,
            self.weighting,
            self.io,
            StreamSender(self.fabric, "executive", "dispatch"),
            self.clock,
            policy=policy,
            heartbeat_ns=heartbeat_ns,
        )

        self.processors = {m.module_id: SimulatedProcessor(m.module_id) for m in registry}
        for module_id, processor in self.processors.items():
            self.fabric.subscribe(module_id, processor.on_frame)
        self.fabric.subscribe("executive", self._on_executive_frame)
        self.fabric.subscribe("autonomous", self.autonomous.deliver)
        for descriptor in adapters:
            self.io.register_adapter(descriptor)

        self.step_interval_ns = step_interval_ns
        self.heartbeat_ns = heartbeat_ns
        self._next_step_ns = step_interval_ns
        self._next_heartbeat_ns = heartbeat_ns
        self._last_decay_ns = 0

        self._routing: Optional[RoutingTable] = None
        self._last_weights: Optional[WeightVector] = None
        self.weight_trace: list[WeightVector] = []
        self.interrupts_staged = 0
        self.stream_faults_staged = 0
        self._fault_counter = 0
        self._published_directives = 0
        self._telemetry: list[Callable[[dict], None]] = []
        self.refresh_weights()

    # --- consolidation and staging -------------------------------------

    def _consolidate(self, entry: StmEntry) -> None:
        self.ltm.store(entry.payload, entry.signature, entry.strength)

    def _on_executive_frame(self, frame: FabricFrame, record) -> None:
        body = frame.payload
        if not isinstance(body, ControlBody):
            return
        if body.control_kind == "interrupt":
            data = dict(body.data)
            interrupt_id = str(data.get("interrupt_id"))
            data.update(record="interrupt", handled=False, wall_staged_ns=time.perf_counter_ns())
            self.stm.put(
                INTERRUPT_PREFIX + interrupt_id,
                data,
                {"interrupt.pending": 1.0},
                defaults.STRENGTH_INTERRUPT,
                author="kernel",
            )
            self.interrupts_staged += 1
            self.publish(
                {
                    "event": "interrupt",
                    "interrupt_id": interrupt_id,
                    "proc_id": data.get("proc_id"),
                    "divergence": data.get("divergence"),
                }
            )
        elif body.control_kind == "stream-fault":
            self._fault_counter += 1
            self.stream_faults_staged += 1
            self.stm.put(
                f"fault.{self._fault_counter}",
                {"record": "stream-fault", **dict(body.data)},
                {"fabric.fault": 1.0},
                defaults.STRENGTH_INTERRUPT,
                author="kernel",
            )

    # --- weighting -------------------------------------------------------

    def _routing_targets(self, kind: ModalityKind) -> tuple[str, ...]:
        if self._routing is None:
            self.refresh_weights()
        assert self._routing is not None
        return self._routing.targets_for(kind)

    def refresh_weights(self) -> bool:
        """Recompute weights and routing if any input changed."""
        key = (
            self.stm.revision,
            self.weighting.program.version,
            self.weighting.active_profile.value,
        )
        if self._last_weights is not None and self._last_weights.inputs_version == key:
            return False
        snapshot = self.stm.snapshot()
        wv = self.weighting.compute_weights(snapshot.features, snapshot.revision)
        self._last_weights = wv
        self._routing = self.weighting.derive_routing(wv)
        self.weight_trace.append(wv)
        self.publish(
            {
                "event": "weights",
                "weights": list(wv.weights),
                "modules": list(self.weighting.registry.ids()),
                "context_revision": wv.context_revision,
                "program_version": wv.program_version,
                "profile": wv.profile_id.value,
            }
        )
        return True

    def current_weights(self) -> WeightVector:
        with self.lock:
            self.refresh_weights()
            assert self._last_weights is not None
            return self._last_weights

    def routing_table(self) -> RoutingTable:
        with self.lock:
            self.refresh_weights()
            assert self._routing is not None
            return self._routing

    # --- the settle loop ---------------------------------------------------

    def settle(self) -> None:
        """Run the instant's causal chain to quiescence."""
        with self.lock:
            for _ in range(SETTLE_BOUND):
                progressed = False
                if self.fabric.pump():
                    progressed = True
                if self.autonomous._inbox:
                    self.autonomous.process_inbox()
                    progressed = True
                directives = self.executive.maybe_tick()
                if directives:
                    progressed = True
                new_total = len(self.executive.decision_log)
                while self._published_directives < new_total:
                    directive = self.executive.decision_log[self._published_directives]
                    self.publish({"event": "directive", **directive.to_obj()})
                    self._published_directives += 1
                if self.refresh_weights():
                    progressed = True
                if not progressed:
                    return
            log.error("settle loop hit its bound; possible directive cycle")

    def _fire_due_events(self, t_ns: int, advance_clock: bool) -> None:
        while True:
            due = min(self._next_step_ns, self._next_heartbeat_ns)
            if due > t_ns:
                break
            if advance_clock:
                self.clock.advance_to(due)
            if due == self._next_step_ns:
                self.autonomous.step()
                self._next_step_ns += self.step_interval_ns
            if due == self._next_heartbeat_ns:
                self.ltm.decay_tick(self.clock.now_ns() - self._last_decay_ns)
                self._last_decay_ns = self.clock.now_ns()
                self._next_heartbeat_ns += self.heartbeat_ns
            self.settle()
        if advance_clock:
            self.clock.advance_to(t_ns)

    def advance_to(self, t_ns: int) -> None:
        """Virtual-clock mode: run all periodic work up to and including t."""
        with self.lock:
            if t_ns < self.clock.now_ns():
                raise ConfigurationError("cannot advance into the past")
            self._fire_due_events(t_ns, advance_clock=True)
            self.settle()

    def catch_up(self) -> None:
        """Live mode: fire everything due by the clock's own now."""
        with self.lock:
            self._fire_due_events(self.clock.now_ns(), advance_clock=False)
            self.settle()

    # --- external operations ------------------------------------------------

    def inject(self, adapter_id: str, payload: ModalityPayload) -> IngestReceipt:
        with self.lock:
            receipt = self.io.ingest(adapter_id, payload)
            self.settle()
            return receipt

    def put_program(self, program: ExternalProgram, role: str = "admin") -> int:
        with self.lock:
            version = self.weighting.apply_external_program(
                program, self.admin_identity, role=role
            )
            self.settle()
            self.publish({"event": "program", "version": version, "goal": program.primary_goal})
            return version

    def decision_log_objs(self) -> list[dict]:
        with self.lock:
            return [d.to_obj() for d in self.executive.decision_log]

    # --- telemetry -------------------------------------------------------------

    def subscribe_telemetry(self, sink: Callable[[dict], None]) -> Callable[[], None]:
        self._telemetry.append(sink)

        def unsubscribe() -> None:
            if sink in self._telemetry:
                self._telemetry.remove(sink)

        return unsubscribe

    def publish(self, event: dict) -> None:
        stamped = {"at_ns": self.clock.now_ns(), **event}
        for sink in list(self._telemetry):
            try:
                sink(stamped)
            except Exception:
                log.exception("telemetry sink failed; dropping it")
                self._telemetry.remove(sink)

    # --- metrics ----------------------------------------------------------------

    def takeover_count(self) -> int:
        from .executive import DirectiveKind

        return sum(1 for d in self.executive.decision_log if d.kind is DirectiveKind.TAKE_OVER)

    def metrics(self) -> dict:
        with self.lock:
            directive_counts: dict[str, int] = {}
            for directive in self.executive.decision_log:
                key = directive.kind.value
                directive_counts[key] = directive_counts.get(key, 0) + 1
            return {
                "now_ns": self.clock.now_ns(),
                "fabric": self.fabric.metrics(),
                "stm": {
                    "revision": self.stm.revision,
                    "occupancy": self.stm.occupancy(),
                    "peak_occupancy": self.stm.peak_occupancy,
                    "consolidated": self.stm.consolidated_count,
                    "dropped": self.stm.dropped_count,
                },
                "ltm": {"traces": len(self.ltm)},
                "autonomous": {
                    "run_steps": self.autonomous.run_step_calls,
                    "status_reports": self.autonomous.status_reports,
                    "interrupts_raised": self.autonomous.interrupts_raised,
                    "completed_runs": self.autonomous.completed_runs,
                },
                "executive": {
                    "ticks": self.executive.ticks,
                    "idle_ticks": self.executive.idle_ticks,
                    "directives": directive_counts,
                },
                "interrupts_staged": self.interrupts_staged,
                "stream_faults": self.stream_faults_staged,
                "io": self.io.counts(),
                "weights_recomputed": len(self.weight_trace),
            }

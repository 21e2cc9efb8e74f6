"""Stored procedures and the autonomous execution loop.

The autonomous area runs one procedure at a time in a tight loop: match a
procedure against the current context, execute one step per cadence tick,
then compare the context against the procedure's expectations. Each step
writes exactly one status report into short-term memory; that report stream
is the only window the executive has into what is running here.

When the observed context diverges from the procedure's expected signature
by at least the administered interrupt threshold, the run stops with state
Interrupted and an Interrupt-priority frame goes to the executive carrying
the divergence and the observed feature slice. An interrupted procedure is
taken out of the auto-match pool until the executive dispatches it again,
so a persistently strange context produces one interrupt, not a storm.

Divergence here is measured only over the features the procedure declares
(trigger keys for matching, expected keys for mismatch): a procedure is
blind to features it never claimed to care about, including this module's
own status-report features.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from . import config as defaults
from .errors import KernelError, ValidationError
from .fabric import StreamSender
from .io_integration import ActionDescriptor, IoIntegration
from .memory import STATUS_KEY, ShortTermMemory
from .modality import ControlBody, Priority, reference_divergence, validate_signature

log = logging.getLogger(__name__)


class RunState(Enum):
    RUNNING = "Running"
    COMPLETED = "Completed"
    INTERRUPTED = "Interrupted"


@dataclass(frozen=True)
class StoredProcedure:
    """A trigger-matched routine with the context it expects while running."""

    proc_id: str
    trigger: Mapping[str, float]
    expected: Mapping[str, float]
    steps: tuple[ActionDescriptor, ...]
    loop: bool = False
    max_iterations: int = 1

    def validate(self) -> list[str]:
        problems = []
        if not self.proc_id:
            problems.append("proc_id must be non-empty")
        problems += [f"trigger: {p}" for p in validate_signature(self.trigger)]
        problems += [f"expected: {p}" for p in validate_signature(self.expected)]
        if not self.steps:
            problems.append(f"procedure {self.proc_id} needs at least one step")
        if self.loop and self.max_iterations < 1:
            problems.append("max_iterations must be >= 1 for looping procedures")
        return problems


@dataclass
class ProcedureRun:
    proc_id: str
    started_at_ns: int
    state: RunState = RunState.RUNNING
    iteration: int = 0
    step_index: int = 0
    last_report_revision: int = 0
    fail_count: int = 0
    preempted: bool = False


def match_procedure(
    features: Mapping[str, float],
    library: Sequence[StoredProcedure],
    threshold: float = defaults.MATCH_THRESHOLD,
) -> Optional[StoredProcedure]:
    """Best trigger match with similarity >= threshold; ties to lowest id.

    Similarity is 1 minus the divergence over the trigger's own keys, so an
    empty trigger matches any context at similarity 1.
    """
    best: Optional[tuple[float, str, StoredProcedure]] = None
    for proc in library:
        similarity = 1.0 - reference_divergence(proc.trigger, features)
        if similarity < threshold:
            continue
        candidate = (-similarity, proc.proc_id, proc)
        if best is None or candidate[:2] < best[:2]:
            best = candidate
    return best[2] if best else None


class AutonomousArea:
    """Owns the procedure library and the single active run."""

    def __init__(
        self,
        stm: ShortTermMemory,
        io: IoIntegration,
        interrupt_sender: StreamSender,
        clock,
        library: Sequence[StoredProcedure],
        interrupt_threshold: Callable[[], float],
        match_threshold: float = defaults.MATCH_THRESHOLD,
        fail_budget: int = defaults.STEP_FAIL_BUDGET,
    ):
        byid = {}
        for proc in library:
            problems = proc.validate()
            if problems:
                raise ValidationError(problems)
            if proc.proc_id in byid:
                raise ValidationError(f"duplicate procedure {proc.proc_id!r}")
            byid[proc.proc_id] = proc
        self._library = dict(byid)
        self._stm = stm
        self._io = io
        self._interrupt_sender = interrupt_sender
        self._clock = clock
        self._interrupt_threshold = interrupt_threshold
        self.match_threshold = match_threshold
        self.fail_budget = fail_budget
        self._run: Optional[ProcedureRun] = None
        self._active: Optional[StoredProcedure] = None
        self._suppressed: set[str] = set()
        self._inbox: list[ControlBody] = []
        self._interrupt_count = 0
        self.run_step_calls = 0
        self.status_reports = 0
        self.interrupts_raised = 0
        self.completed_runs = 0

    @property
    def run(self) -> Optional[ProcedureRun]:
        return self._run

    def library(self) -> tuple[StoredProcedure, ...]:
        return tuple(self._library.values())

    def suppressed(self) -> frozenset[str]:
        return frozenset(self._suppressed)

    # --- inbox (dispatch frames land here via the fabric) ---------------

    def deliver(self, frame, record) -> None:
        if isinstance(frame.payload, ControlBody) and frame.payload.control_kind == "dispatch":
            self._inbox.append(frame.payload)

    def process_inbox(self) -> None:
        while self._inbox:
            body = self._inbox.pop(0)
            proc_id = str(body.data.get("proc_id", ""))
            proc = self._library.get(proc_id)
            if proc is None:
                log.warning("dispatch for unknown procedure %r", proc_id)
                self._report(
                    {"state": "DispatchFailed", "proc_id": proc_id, "iteration": 0, "step_index": 0},
                    {"auto.dispatch-failed": 1.0},
                )
                continue
            if self._run is not None and self._run.state is RunState.RUNNING:
                self._run.state = RunState.COMPLETED
                self._run.preempted = True
                self._report_run(preempted=True)
                self.completed_runs += 1
            self._suppressed.discard(proc_id)
            self._start(proc, dispatched=True)

    def _start(self, proc: StoredProcedure, dispatched: bool) -> None:
        self._run = ProcedureRun(proc_id=proc.proc_id, started_at_ns=self._clock.now_ns())
        self._active = proc
        log.info("run started: %s (%s)", proc.proc_id, "dispatched" if dispatched else "matched")

    # --- cadence ---------------------------------------------------------

    def step(self) -> None:
        """One autonomous tick: match if idle, else step and check."""
        if self._run is None or self._run.state is not RunState.RUNNING:
            features = self._stm.snapshot().features
            eligible = [p for p in self._library.values() if p.proc_id not in self._suppressed]
            proc = match_procedure(features, eligible, self.match_threshold)
            if proc is not None:
                self._start(proc, dispatched=False)
            else:
                return
        self._run_step()
        if self._run is not None and self._run.state is RunState.RUNNING:
            self._detect_mismatch()

    def _run_step(self) -> None:
        run, proc = self._run, self._active
        assert run is not None and proc is not None
        wall_start = time.perf_counter_ns()
        action = proc.steps[run.step_index]
        step_failed = False
        try:
            self._io.emit(action, caller="autonomous", decided_at_wall_ns=wall_start)
        except KernelError as exc:
            step_failed = True
            run.fail_count += 1
            log.warning("step %d of %s failed: %s", run.step_index, proc.proc_id, exc)
        run.step_index += 1
        if run.step_index >= len(proc.steps):
            run.step_index = 0
            run.iteration += 1
            if not proc.loop or run.iteration >= proc.max_iterations:
                run.state = RunState.COMPLETED
                self.completed_runs += 1
        if run.fail_count > self.fail_budget and run.state is RunState.RUNNING:
            run.state = RunState.COMPLETED
            self.completed_runs += 1
            log.warning("run %s aborted after %d step failures", proc.proc_id, run.fail_count)
        self.run_step_calls += 1
        self._report_run(step_failed=step_failed)

    def _detect_mismatch(self) -> None:
        run, proc = self._run, self._active
        assert run is not None and proc is not None
        snapshot = self._stm.snapshot()
        divergence = reference_divergence(proc.expected, snapshot.features)
        threshold = self._interrupt_threshold()
        if divergence < threshold:
            return
        self._interrupt_count += 1
        interrupt_id = f"int-{self._interrupt_count}"
        observed = {key: snapshot.features.get(key, 0.0) for key in proc.expected}
        run.state = RunState.INTERRUPTED
        self._suppressed.add(proc.proc_id)
        self.interrupts_raised += 1
        self._report_run()
        body = ControlBody(
            "interrupt",
            {
                "interrupt_id": interrupt_id,
                "proc_id": proc.proc_id,
                "divergence": divergence,
                "observed": observed,
                "raised_at_ns": self._clock.now_ns(),
                "wall_raised_ns": time.perf_counter_ns(),
            },
        )
        result = self._interrupt_sender.send(frozenset({"executive"}), body, Priority.INTERRUPT)
        if not result.accepted:
            log.error("interrupt %s hit backpressure", interrupt_id)
        log.info(
            "interrupt %s: %s diverged %.3f >= %.3f",
            interrupt_id, proc.proc_id, divergence, threshold,
        )

    # --- status reports ---------------------------------------------------

    def _report_run(self, step_failed: bool = False, preempted: bool = False) -> None:
        run, proc = self._run, self._active
        assert run is not None and proc is not None
        record = {
            "record": "status",
            "proc_id": run.proc_id,
            "state": run.state.value,
            "iteration": run.iteration,
            "step_index": run.step_index,
            "fail_count": run.fail_count,
            "step_failed": step_failed,
            "preempted": preempted or run.preempted,
        }
        signature = {
            f"auto.proc.{run.proc_id}": 1.0,
            f"auto.state.{run.state.value}": 1.0,
        }
        run.last_report_revision = self._report(record, signature)

    def _report(self, record: dict, signature: dict[str, float]) -> int:
        revision = self._stm.put(
            STATUS_KEY, record, signature, defaults.STRENGTH_STATUS, author="autonomous"
        )
        self.status_reports += 1
        return revision

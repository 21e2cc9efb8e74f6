"""The executive: deliberate supervision over the autonomous loop.

The executive never touches the autonomous area directly. Its inputs are
exactly the short-term memory snapshot, the administered program, interrupt
records staged into short-term memory, and long-term recalls; its outputs
are directives whose side effects (profile selection, procedure dispatch,
action emission, decision consolidation) flow through the weighting system,
the fabric, and the io layer. That one-way visibility is load-bearing: the
autonomous area must keep working when the executive is busy or idle.

Ticks are revision gated. A tick at an unchanged short-term memory revision
with no pending interrupts issues nothing and writes nothing; a heartbeat
forces a look at a fixed cadence but obeys the same rule. When a tick does
issue directives, the full list is computed first by a pure policy function
and only then dispatched, each one appended to the decision log and written
into short-term memory as the executive's monologue.

The default policy is a small rule table:

* every unhandled interrupt: take over, recall traces by the observed
  feature slice, dispatch the procedure a recall names (or emit a halt-safe
  action when none does), switch to the Logical profile, record a decision
* goal completion: when the program carries a
  "complete-when-features: f1, f2, ..." instruction and every named feature
  is active, issue Complete once and record the decision
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from . import config as defaults
from .dps import ProfileId, WeightingSystem
from .errors import KernelError
from .fabric import StreamSender
from .io_integration import ActionDescriptor, IoIntegration
from .memory import (
    COMPLETE_KEY,
    DIRECTIVE_PREFIX,
    INTERRUPT_PREFIX,
    ContextSnapshot,
    LongTermMemory,
    MemoryTrace,
    ShortTermMemory,
)
from .modality import ControlBody, ModalityKind, ModalityPayload, Priority

log = logging.getLogger(__name__)

COMPLETE_INSTRUCTION = "complete-when-features:"
HALT_ACTION = "halt-safe"


class DirectiveKind(Enum):
    DISPATCH_PROCEDURE = "DispatchProcedure"
    TAKE_OVER = "TakeOver"
    SELECT_PROFILE = "SelectProfile"
    EMIT_ACTION = "EmitAction"
    RECORD_DECISION = "RecordDecision"
    COMPLETE = "Complete"


@dataclass(frozen=True)
class Directive:
    directive_id: str
    kind: DirectiveKind
    argument: Mapping[str, object]
    issued_at_revision: int
    issued_at_ns: int

    def to_obj(self) -> dict:
        return {
            "directive_id": self.directive_id,
            "kind": self.kind.value,
            "argument": dict(self.argument),
            "issued_at_revision": self.issued_at_revision,
            "issued_at_ns": self.issued_at_ns,
        }


@dataclass(frozen=True)
class PolicyInputs:
    snapshot: ContextSnapshot
    program_goal: str
    instructions: tuple[str, ...]
    interrupts: tuple[Mapping, ...]
    interrupt_recalls: Mapping[str, tuple[MemoryTrace, ...]]


DirectiveSpec = tuple[DirectiveKind, dict]
Policy = Callable[[PolicyInputs], list[DirectiveSpec]]


def parse_complete_features(instructions: Sequence[str]) -> tuple[str, ...]:
    for line in instructions:
        stripped = line.strip()
        if stripped.lower().startswith(COMPLETE_INSTRUCTION):
            rest = stripped[len(COMPLETE_INSTRUCTION):]
            return tuple(f.strip() for f in rest.split(",") if f.strip())
    return ()


def procedure_named_by(trace: MemoryTrace) -> Optional[str]:
    """Traces name procedures as Text "procedure:<id>" or {"procedure": id}."""
    content = trace.content
    if isinstance(content, ModalityPayload) and content.kind is ModalityKind.TEXT:
        text = content.text or ""
        if text.startswith("procedure:"):
            return text.split(":", 1)[1].strip() or None
    if isinstance(content, dict):
        named = content.get("procedure")
        if isinstance(named, str) and named:
            return named
    return None


def rule_table_policy(inputs: PolicyInputs) -> list[DirectiveSpec]:
    specs: list[DirectiveSpec] = []
    for record in inputs.interrupts:
        interrupt_id = str(record["interrupt_id"])
        specs.append(
            (
                DirectiveKind.TAKE_OVER,
                {
                    "interrupt_id": interrupt_id,
                    "proc_id": record.get("proc_id"),
                    "divergence": record.get("divergence"),
                },
            )
        )
        target = None
        for trace in inputs.interrupt_recalls.get(interrupt_id, ()):
            target = procedure_named_by(trace)
            if target:
                break
        if target:
            specs.append(
                (DirectiveKind.DISPATCH_PROCEDURE, {"proc_id": target, "interrupt_id": interrupt_id})
            )
        else:
            specs.append(
                (DirectiveKind.EMIT_ACTION, {"action": HALT_ACTION, "interrupt_id": interrupt_id})
            )
        specs.append((DirectiveKind.SELECT_PROFILE, {"profile": ProfileId.LOGICAL.value}))
        specs.append(
            (
                DirectiveKind.RECORD_DECISION,
                {
                    "summary": f"interrupt {interrupt_id} on {record.get('proc_id')}: "
                    + ("re-dispatched " + target if target else "halted"),
                },
            )
        )
    needed = parse_complete_features(inputs.instructions)
    if (
        needed
        and COMPLETE_KEY not in inputs.snapshot.features
        and all(inputs.snapshot.features.get(f, 0.0) > 0.0 for f in needed)
    ):
        specs.append((DirectiveKind.COMPLETE, {"goal": inputs.program_goal, "features": list(needed)}))
        specs.append((DirectiveKind.RECORD_DECISION, {"summary": f"complete: {inputs.program_goal}"}))
    return specs


class Executive:
    def __init__(
        self,
        stm: ShortTermMemory,
        ltm: LongTermMemory,
        weighting: WeightingSystem,
        io: IoIntegration,
        dispatch_sender: StreamSender,
        clock,
        policy: Policy = rule_table_policy,
        heartbeat_ns: int = defaults.HEARTBEAT_NS,
        recall_limit: int = defaults.RECALL_LIMIT,
        decision_strength: float = defaults.STRENGTH_INTERRUPT,
    ):
        self._stm = stm
        self._ltm = ltm
        self._weighting = weighting
        self._io = io
        self._dispatch_sender = dispatch_sender
        self._clock = clock
        self._policy = policy
        self.heartbeat_ns = heartbeat_ns
        self.recall_limit = recall_limit
        self._decision_strength = decision_strength
        self._last_ticked_revision = -1
        self._last_tick_ns: Optional[int] = None
        self._handled: set[str] = set()
        self._counter = 0
        self.decision_log: list[Directive] = []
        self.takeover_latencies: list[dict] = []
        self.ticks = 0
        self.idle_ticks = 0

    # --- tick gating ------------------------------------------------------

    def maybe_tick(self) -> list[Directive]:
        now = self._clock.now_ns()
        revision_changed = self._stm.revision != self._last_ticked_revision
        heartbeat_due = self._last_tick_ns is None or now - self._last_tick_ns >= self.heartbeat_ns
        if not revision_changed and not heartbeat_due:
            return []
        return self.tick()

    def tick(self) -> list[Directive]:
        """Read, decide, then dispatch. Idle ticks leave no trace."""
        wall_start = time.perf_counter_ns()
        now = self._clock.now_ns()
        self.ticks += 1
        snapshot = self._stm.snapshot()
        interrupts = self._pending_interrupts()
        recalls = {
            str(record["interrupt_id"]): tuple(
                self._ltm.recall(dict(record.get("observed", {})), self.recall_limit)
            )
            for record in interrupts
        }
        specs = self._policy(
            PolicyInputs(
                snapshot=snapshot,
                program_goal=self._weighting.program.primary_goal,
                instructions=self._weighting.program.instructions,
                interrupts=tuple(interrupts),
                interrupt_recalls=recalls,
            )
        )
        directives = []
        for kind, argument in specs:
            self._counter += 1
            directives.append(
                Directive(
                    directive_id=f"d{self._counter}",
                    kind=kind,
                    argument=argument,
                    issued_at_revision=snapshot.revision,
                    issued_at_ns=now,
                )
            )
        for directive in directives:
            self._execute(directive, wall_start)
        if not directives:
            self.idle_ticks += 1
        self._last_ticked_revision = self._stm.revision
        self._last_tick_ns = now
        return directives

    def _pending_interrupts(self) -> list[dict]:
        records = []
        for entry in self._stm.entries_by_prefix(INTERRUPT_PREFIX):
            payload = entry.payload
            if not isinstance(payload, dict) or payload.get("handled") is not False:
                continue
            if str(payload.get("interrupt_id")) in self._handled:
                continue
            records.append(payload)
        records.sort(key=lambda r: (r.get("raised_at_ns", 0), str(r.get("interrupt_id"))))
        return records

    # --- directive side effects -------------------------------------------

    def _execute(self, directive: Directive, wall_start: int) -> None:
        self.decision_log.append(directive)
        signature = {COMPLETE_KEY: 1.0} if directive.kind is DirectiveKind.COMPLETE else {}
        self._stm.put(
            DIRECTIVE_PREFIX + directive.directive_id,
            directive.to_obj(),
            signature,
            defaults.STRENGTH_DIRECTIVE,
            author="executive",
        )
        kind = directive.kind
        try:
            if kind is DirectiveKind.TAKE_OVER:
                self._take_over(directive)
            elif kind is DirectiveKind.SELECT_PROFILE:
                self._weighting.select_profile(
                    ProfileId(str(directive.argument["profile"])), caller="executive"
                )
            elif kind is DirectiveKind.DISPATCH_PROCEDURE:
                self._dispatch_sender.send(
                    frozenset({"autonomous"}),
                    ControlBody(
                        "dispatch",
                        {
                            "proc_id": directive.argument["proc_id"],
                            "directive_id": directive.directive_id,
                        },
                    ),
                    Priority.CONTROL,
                )
            elif kind is DirectiveKind.EMIT_ACTION:
                self._emit_halt_safe(wall_start)
            elif kind is DirectiveKind.RECORD_DECISION:
                self._ltm.store(
                    {
                        "record": "decision",
                        "summary": directive.argument.get("summary", ""),
                        "directive_id": directive.directive_id,
                        "revision": directive.issued_at_revision,
                    },
                    dict(self._stm.snapshot().features),
                    self._decision_strength,
                )
            # Complete needs no side effect beyond its gate feature above
        except KernelError as exc:
            log.error("directive %s (%s) failed: %s", directive.directive_id, kind.value, exc)

    def _take_over(self, directive: Directive) -> None:
        interrupt_id = str(directive.argument["interrupt_id"])
        key = INTERRUPT_PREFIX + interrupt_id
        entry = self._stm.get(key)
        if entry is not None and isinstance(entry.payload, dict):
            record = dict(entry.payload)
            wall_staged = record.get("wall_staged_ns")
            if isinstance(wall_staged, int):
                self.takeover_latencies.append(
                    {
                        "interrupt_id": interrupt_id,
                        "wall_ns": time.perf_counter_ns() - wall_staged,
                        "virtual_ns": self._clock.now_ns() - int(record.get("raised_at_ns", 0)),
                    }
                )
            record["handled"] = True
            record["handled_by"] = directive.directive_id
            self._stm.put(key, record, {}, entry.strength, author="executive")
        self._handled.add(interrupt_id)

    def _emit_halt_safe(self, wall_start: int) -> None:
        outputs = self._io.output_adapters()
        if not outputs:
            log.warning("halt-safe requested with no output adapters")
            return
        for descriptor in outputs:
            self._io.emit(
                ActionDescriptor(
                    adapter_id=descriptor.adapter_id,
                    payload=ModalityPayload.of_text(HALT_ACTION),
                ),
                caller="executive",
                decided_at_wall_ns=wall_start,
            )

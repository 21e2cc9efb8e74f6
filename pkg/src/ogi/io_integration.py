"""Adapters between the outside world and the kernel.

Input adapters ingest typed payloads: each accepted ingest produces exactly
one Data-priority fabric frame routed to the modules the current routing
table names for that kind, plus one short-term memory write summarizing the
percept. Output adapters emit actions on behalf of the executive or the
autonomous area only; every emission lands in the action log with the wall
time from the caller's decision to the adapter handoff, which is what makes
the two control paths' speed difference measurable.

Ingest is rate limited per adapter with a fixed one-second window on the
kernel clock. Fabric backpressure propagates to the caller as a rejected
receipt rather than silently dropping.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import config as defaults
from .clock import NS_PER_S
from .errors import AuthorizationError, ConfigurationError, UnknownModuleError, ValidationError
from .fabric import Fabric, StreamSender
from .memory import IO_PREFIX, ShortTermMemory
from .modality import (
    ControlBody,
    ModalityKind,
    ModalityPayload,
    Priority,
    summarize_to_signature,
    validate_payload,
)

log = logging.getLogger(__name__)

EMIT_CALLERS = ("executive", "autonomous")


class Direction(Enum):
    INPUT = "Input"
    OUTPUT = "Output"
    BIDIRECTIONAL = "Bidirectional"


@dataclass(frozen=True)
class AdapterDescriptor:
    adapter_id: str
    direction: Direction
    modality: ModalityKind
    schema_version: int = 1
    rate_limit_per_s: int = defaults.RATE_LIMIT_PER_S

    @property
    def accepts_input(self) -> bool:
        return self.direction in (Direction.INPUT, Direction.BIDIRECTIONAL)

    @property
    def accepts_output(self) -> bool:
        return self.direction in (Direction.OUTPUT, Direction.BIDIRECTIONAL)


@dataclass(frozen=True)
class ActionDescriptor:
    adapter_id: str
    payload: ModalityPayload
    feedback_requested: bool = False
    action_id: Optional[str] = None


@dataclass(frozen=True)
class IngestReceipt:
    accepted: bool
    adapter_id: str
    reason: str = ""
    frame_id: Optional[str] = None
    revision: Optional[int] = None


@dataclass(frozen=True)
class ActionReceipt:
    action_id: str
    adapter_id: str
    caller: str
    emitted_at_ns: int
    decide_to_emit_wall_ns: int
    feedback_frame_id: Optional[str] = None


@dataclass
class _AdapterState:
    descriptor: AdapterDescriptor
    ingest_sender: StreamSender
    feedback_sender: StreamSender
    window: int = -1
    window_count: int = 0
    ingested: int = 0
    emitted: int = 0


class IoIntegration:
    def __init__(
        self,
        fabric: Fabric,
        stm: ShortTermMemory,
        clock,
        routing_targets: Callable[[ModalityKind], tuple[str, ...]],
        percept_strength: float = defaults.STRENGTH_PERCEPT,
    ):
        self._fabric = fabric
        self._stm = stm
        self._clock = clock
        self._routing_targets = routing_targets
        self._percept_strength = percept_strength
        self._adapters: dict[str, _AdapterState] = {}
        self._action_counter = 0
        self.action_log: list[dict] = []

    # --- registration (hot: allowed while the kernel is running) -------

    def register_adapter(self, descriptor: AdapterDescriptor) -> None:
        if not descriptor.adapter_id:
            raise ConfigurationError("adapter id must be non-empty")
        if descriptor.adapter_id in self._adapters:
            raise ConfigurationError(f"adapter {descriptor.adapter_id!r} already registered")
        if descriptor.rate_limit_per_s < 1:
            raise ConfigurationError("rate limit must be at least 1/s")
        endpoint = IO_PREFIX + descriptor.adapter_id
        self._fabric.register_endpoint(endpoint)
        self._adapters[descriptor.adapter_id] = _AdapterState(
            descriptor=descriptor,
            ingest_sender=StreamSender(self._fabric, endpoint, "ingest"),
            feedback_sender=StreamSender(self._fabric, endpoint, "feedback"),
        )
        log.info("adapter registered: %s (%s %s)", descriptor.adapter_id,
                 descriptor.direction.value, descriptor.modality.value)

    def adapters(self) -> tuple[AdapterDescriptor, ...]:
        return tuple(state.descriptor for state in self._adapters.values())

    def output_adapters(self) -> tuple[AdapterDescriptor, ...]:
        return tuple(d for d in self.adapters() if d.accepts_output)

    def _state(self, adapter_id: str) -> _AdapterState:
        try:
            return self._adapters[adapter_id]
        except KeyError:
            raise UnknownModuleError(f"adapter {adapter_id!r} is not registered") from None

    # --- inbound ---------------------------------------------------------

    def ingest(self, adapter_id: str, payload: ModalityPayload) -> IngestReceipt:
        state = self._state(adapter_id)
        descriptor = state.descriptor
        if not descriptor.accepts_input:
            return IngestReceipt(False, adapter_id, reason="direction")
        problems = validate_payload(payload)
        if problems:
            return IngestReceipt(False, adapter_id, reason=f"invalid-payload: {problems[0]}")
        if payload.kind is not descriptor.modality:
            return IngestReceipt(
                False, adapter_id,
                reason=f"kind-mismatch: adapter carries {descriptor.modality.value}",
            )
        window = self._clock.now_ns() // NS_PER_S
        if window != state.window:
            state.window = window
            state.window_count = 0
        if state.window_count >= descriptor.rate_limit_per_s:
            return IngestReceipt(False, adapter_id, reason="rate-limit")
        targets = self._routing_targets(payload.kind)
        result = state.ingest_sender.send(frozenset(targets), payload, Priority.DATA)
        if not result.accepted:
            return IngestReceipt(False, adapter_id, reason="backpressure")
        state.window_count += 1
        state.ingested += 1
        revision = self._stm.put(
            IO_PREFIX + adapter_id,
            payload,
            summarize_to_signature(payload, adapter_id),
            self._percept_strength,
            author="io-integration",
        )
        return IngestReceipt(True, adapter_id, frame_id=result.frame_id, revision=revision)

    # --- outbound --------------------------------------------------------

    def emit(
        self,
        action: ActionDescriptor,
        caller: str,
        decided_at_wall_ns: Optional[int] = None,
    ) -> ActionReceipt:
        """Hand an action to an output adapter. Cognitive callers only."""
        if caller not in EMIT_CALLERS:
            raise AuthorizationError(f"emit denied for caller {caller!r}")
        state = self._state(action.adapter_id)
        if not state.descriptor.accepts_output:
            raise ConfigurationError(f"adapter {action.adapter_id!r} does not accept output")
        problems = validate_payload(action.payload)
        if problems:
            raise ValidationError(problems)
        if action.action_id is None:
            self._action_counter += 1
            action_id = f"a{self._action_counter}"
        else:
            action_id = action.action_id
        wall_now = time.perf_counter_ns()
        latency = wall_now - decided_at_wall_ns if decided_at_wall_ns is not None else 0
        feedback_frame_id = None
        if action.feedback_requested:
            body = ControlBody("feedback", {"action_id": action_id, "adapter_id": action.adapter_id})
            result = state.feedback_sender.send(frozenset({caller}), body, Priority.DATA)
            if result.accepted:
                feedback_frame_id = result.frame_id
            else:
                log.warning("feedback frame for %s hit backpressure", action_id)
        state.emitted += 1
        receipt = ActionReceipt(
            action_id=action_id,
            adapter_id=action.adapter_id,
            caller=caller,
            emitted_at_ns=self._clock.now_ns(),
            decide_to_emit_wall_ns=latency,
            feedback_frame_id=feedback_frame_id,
        )
        self.action_log.append(
            {
                "action_id": action_id,
                "adapter_id": action.adapter_id,
                "caller": caller,
                "emitted_at_ns": receipt.emitted_at_ns,
                "decide_to_emit_wall_ns": latency,
                "payload_kind": action.payload.kind.value,
                "feedback_frame_id": feedback_frame_id,
            }
        )
        return receipt

    def counts(self) -> dict[str, dict[str, int]]:
        return {
            adapter_id: {"ingested": s.ingested, "emitted": s.emitted}
            for adapter_id, s in self._adapters.items()
        }

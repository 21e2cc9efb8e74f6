"""Prioritized multipath interconnect between kernel endpoints.

Frames are enqueued onto one of N lanes (least-loaded within the frame's
priority class, ties to the lowest lane index) and drained by pump() in
(priority, delivery-time, enqueue-order) order, so an Interrupt-priority
frame always leaves before any deliverable Control or Data frame.

Two delivery modes:

* ZERO_LATENCY: a frame becomes deliverable the instant it is enqueued; it
  still sits in a lane until the next pump so that capacity, backpressure,
  and priority semantics hold.
* QUEUED: each frame picks up a per-lane pseudorandom delay drawn from the
  configured range with a seeded generator, which lets multipath reordering
  happen reproducibly.

Per-subscriber reassembly restores per-(source, stream) order: frames must
be sent with strictly increasing seq, and each subscriber sees seq 1, 2, 3,
... with gaps held back. Holding more than gap_budget frames for one gap
declares a stream fault: the held frames are discarded (counted faulted),
the stream resumes past the gap, and a Control-priority fault frame is sent
to the fault destination so no loss is ever silent.

Accounting is per frame with fault dominance: a frame counts delivered only
once every matching subscriber has received it, and counts faulted if any
subscriber copy was discarded. accepted == delivered + pending + faulted at
every pump boundary.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import config as defaults
from .clock import NS_PER_MS
from .errors import (
    ConfigurationError,
    FrameSequenceError,
    UnknownModuleError,
    ValidationError,
)
from .modality import ControlBody, FabricFrame, Priority, validate_frame

log = logging.getLogger(__name__)

FABRIC_ENDPOINT = "fabric"
FAULT_STREAM = "fabric.faults"


class DeliveryMode(Enum):
    ZERO_LATENCY = "ZeroLatency"
    QUEUED = "Queued"


class SendStatus(Enum):
    ACCEPTED = "accepted"
    BACKPRESSURE = "backpressure"


@dataclass(frozen=True)
class SendResult:
    status: SendStatus
    frame_id: str
    lane: Optional[int] = None

    @property
    def accepted(self) -> bool:
        return self.status is SendStatus.ACCEPTED


@dataclass(frozen=True)
class DeliveryRecord:
    frame_id: str
    subscriber: str
    lane: int
    enqueued_at_ns: int
    delivered_at_ns: int

    @property
    def latency_ns(self) -> int:
        return self.delivered_at_ns - self.enqueued_at_ns


@dataclass(frozen=True)
class FabricConfig:
    lanes: int = defaults.LANE_COUNT
    mode: DeliveryMode = DeliveryMode.ZERO_LATENCY
    capacity: dict[Priority, int] = field(
        default_factory=lambda: {
            Priority.INTERRUPT: defaults.CAPACITY_INTERRUPT,
            Priority.CONTROL: defaults.CAPACITY_CONTROL,
            Priority.DATA: defaults.CAPACITY_DATA,
        }
    )
    delay_min_ms: float = 1.0
    delay_max_ms: float = 5.0
    gap_budget: int = defaults.GAP_BUDGET
    seed: int = 0
    fault_destination: str = "executive"


@dataclass
class Subscription:
    key: str
    module: str
    pattern: frozenset[str]
    handler: Optional[Callable[[FabricFrame, DeliveryRecord], None]]

    def matches(self, destinations: frozenset[str]) -> bool:
        return bool(self.pattern & destinations)


@dataclass
class _Queued:
    frame: FabricFrame
    lane: int
    enqueued_at: int
    deliverable_at: int
    order: int


@dataclass
class _FrameState:
    lane: int
    enqueued_at: int
    remaining: int = -1  # matching-subscriber count, set at dispatch
    faulted: bool = False


@dataclass
class _Reassembly:
    expected: int = 1
    held: dict[int, _Queued] = field(default_factory=dict)


class Fabric:
    def __init__(self, cfg: FabricConfig, clock):
        if cfg.lanes < 1:
            raise ConfigurationError("fabric needs at least one lane")
        if cfg.gap_budget < 1:
            raise ConfigurationError("gap budget must be at least 1")
        if cfg.delay_min_ms > cfg.delay_max_ms:
            raise ConfigurationError("delay range is inverted")
        self.cfg = cfg
        self.clock = clock
        self._endpoints: set[str] = {FABRIC_ENDPOINT}
        self._subs: dict[tuple[str, frozenset[str]], Subscription] = {}
        self._lanes: list[list[_Queued]] = [[] for _ in range(cfg.lanes)]
        self._lane_rng = [random.Random(cfg.seed * 7919 + i) for i in range(cfg.lanes)]
        self._order = 0
        self._last_seq: dict[tuple[str, str], int] = {}
        self._states: dict[str, _FrameState] = {}
        self._reasm: dict[tuple[str, str, str], _Reassembly] = {}
        self._fault_seq = 0
        # accounting
        self.accepted = 0
        self.delivered = 0
        self.faulted = 0
        self._pending_ids: set[str] = set()
        self._per_lane_delivered = [0] * cfg.lanes
        self._latencies_ns: list[int] = []
        self._peak_depth: dict[Priority, int] = {p: 0 for p in Priority}
        self.fault_events: list[dict] = []

    # --- topology ----------------------------------------------------

    def register_endpoint(self, endpoint_id: str) -> None:
        if not endpoint_id:
            raise ConfigurationError("endpoint id must be non-empty")
        self._endpoints.add(endpoint_id)

    def endpoints(self) -> frozenset[str]:
        return frozenset(self._endpoints)

    def subscribe(
        self,
        module: str,
        handler: Optional[Callable[[FabricFrame, DeliveryRecord], None]] = None,
        pattern: Optional[frozenset[str]] = None,
    ) -> Subscription:
        """Deliver frames whose destinations intersect the pattern.

        Defaults to the module's own name. Subscribing twice with the same
        (module, pattern) is a no-op returning the existing subscription.
        """
        if module not in self._endpoints:
            raise UnknownModuleError(f"subscriber {module!r} is not registered")
        pat = frozenset(pattern) if pattern is not None else frozenset({module})
        key = (module, pat)
        existing = self._subs.get(key)
        if existing is not None:
            return existing
        sub = Subscription(key=f"{module}#{len(self._subs)}", module=module, pattern=pat, handler=handler)
        self._subs[key] = sub
        return sub

    # --- send --------------------------------------------------------

    def send(self, frame: FabricFrame) -> SendResult:
        problems = validate_frame(frame)
        if problems:
            raise ValidationError(problems)
        if frame.source not in self._endpoints:
            raise UnknownModuleError(f"source {frame.source!r} is not registered")
        for dest in frame.destinations:
            if dest not in self._endpoints:
                raise UnknownModuleError(f"destination {dest!r} is not registered")
        stream_key = (frame.source, frame.stream_id)
        last = self._last_seq.get(stream_key, 0)
        if frame.seq <= last:
            raise FrameSequenceError(
                f"stream {stream_key} seq {frame.seq} not above {last}"
            )

        lane = self._pick_lane(frame.priority)
        if lane is None:
            return SendResult(SendStatus.BACKPRESSURE, frame.frame_id)

        self._last_seq[stream_key] = frame.seq
        now = self.clock.now_ns()
        if self.cfg.mode is DeliveryMode.ZERO_LATENCY:
            deliverable_at = now
        else:
            lo = int(self.cfg.delay_min_ms * NS_PER_MS)
            hi = int(self.cfg.delay_max_ms * NS_PER_MS)
            deliverable_at = now + self._lane_rng[lane].randrange(lo, hi + 1)
        self._order += 1
        qf = _Queued(frame=frame, lane=lane, enqueued_at=now, deliverable_at=deliverable_at, order=self._order)
        self._lanes[lane].append(qf)
        self._states[frame.frame_id] = _FrameState(lane=lane, enqueued_at=now)
        self.accepted += 1
        self._pending_ids.add(frame.frame_id)
        depth = self._depth(frame.priority)
        if depth > self._peak_depth[frame.priority]:
            self._peak_depth[frame.priority] = depth
        return SendResult(SendStatus.ACCEPTED, frame.frame_id, lane)

    def _pick_lane(self, priority: Priority) -> Optional[int]:
        cap = self.cfg.capacity[priority]
        best, best_depth = None, None
        for i, lane in enumerate(self._lanes):
            depth = sum(1 for q in lane if q.frame.priority is priority)
            if depth >= cap:
                continue
            if best_depth is None or depth < best_depth:
                best, best_depth = i, depth
        return best

    def _depth(self, priority: Priority) -> int:
        return sum(
            1 for lane in self._lanes for q in lane if q.frame.priority is priority
        )

    # --- delivery ----------------------------------------------------

    def pump(self, now_ns: Optional[int] = None) -> list[DeliveryRecord]:
        """Drain every deliverable frame, highest priority first.

        Returns the delivery records produced, in delivery order. Fault
        frames generated mid-pump are themselves pumped if deliverable.
        """
        now = self.clock.now_ns() if now_ns is None else now_ns
        out: list[DeliveryRecord] = []
        while True:
            batch = [q for lane in self._lanes for q in lane if q.deliverable_at <= now]
            if not batch:
                break
            batch.sort(key=lambda q: (q.frame.priority, q.deliverable_at, q.order))
            for qf in batch:
                self._lanes[qf.lane].remove(qf)
                self._dispatch(qf, now, out)
        return out

    def _dispatch(self, qf: _Queued, now: int, out: list[DeliveryRecord]) -> None:
        frame = qf.frame
        matching = [s for s in self._subs.values() if s.matches(frame.destinations)]
        state = self._states[frame.frame_id]
        state.remaining = len(matching)
        if not matching:
            self._finalize(frame.frame_id)
            return
        for sub in matching:
            self._reassemble(sub, qf, now, out)

    def _reassemble(self, sub: Subscription, qf: _Queued, now: int, out: list[DeliveryRecord]) -> None:
        frame = qf.frame
        key = (sub.key, frame.source, frame.stream_id)
        st = self._reasm.setdefault(key, _Reassembly())
        if frame.seq == st.expected:
            self._deliver(sub, qf, now, out)
            st.expected += 1
            while st.expected in st.held:
                self._deliver(sub, st.held.pop(st.expected), now, out)
                st.expected += 1
        elif frame.seq > st.expected:
            if len(st.held) + 1 > self.cfg.gap_budget:
                self._stream_fault(sub, st, qf, now)
            else:
                st.held[frame.seq] = qf
        else:
            # the stream already faulted past this seq; the episode's fault
            # frame covered the loss, so just account and log
            log.debug("stale frame %s seq %d for %s", frame.frame_id, frame.seq, sub.key)
            self._resolve(frame.frame_id, faulted=True)

    def _deliver(self, sub: Subscription, qf: _Queued, now: int, out: list[DeliveryRecord]) -> None:
        record = DeliveryRecord(
            frame_id=qf.frame.frame_id,
            subscriber=sub.module,
            lane=qf.lane,
            enqueued_at_ns=qf.enqueued_at,
            delivered_at_ns=now,
        )
        out.append(record)
        self._per_lane_delivered[qf.lane] += 1
        self._latencies_ns.append(record.latency_ns)
        if sub.handler is not None:
            sub.handler(qf.frame, record)
        self._resolve(qf.frame.frame_id, faulted=False)

    def _stream_fault(self, sub: Subscription, st: _Reassembly, overflow: _Queued, now: int) -> None:
        frame = overflow.frame
        skipped = sorted(st.held.keys()) + [frame.seq]
        for seq in sorted(st.held.keys()):
            self._resolve(st.held[seq].frame.frame_id, faulted=True)
        st.held.clear()
        self._resolve(frame.frame_id, faulted=True)
        resume_at = skipped[-1] + 1
        missing_from = st.expected
        st.expected = resume_at
        event = {
            "source": frame.source,
            "stream_id": frame.stream_id,
            "subscriber": sub.module,
            "missing_from_seq": missing_from,
            "skipped_seqs": skipped,
            "resumed_at_seq": resume_at,
            "at_ns": now,
        }
        self.fault_events.append(event)
        log.warning(
            "stream fault on %s/%s for %s: missing seq %d, skipped %d frames",
            frame.source,
            frame.stream_id,
            sub.module,
            missing_from,
            len(skipped),
        )
        self._fault_seq += 1
        fault_frame = FabricFrame(
            frame_id=f"fault-{self._fault_seq}",
            source=FABRIC_ENDPOINT,
            destinations=frozenset({self.cfg.fault_destination}),
            stream_id=FAULT_STREAM,
            seq=self._fault_seq,
            priority=Priority.CONTROL,
            sent_at_ns=now,
            payload=ControlBody("stream-fault", event),
        )
        result = self.send(fault_frame)
        if not result.accepted:
            log.error("fault frame hit backpressure; event kept in fault_events")

    def _resolve(self, frame_id: str, faulted: bool) -> None:
        state = self._states[frame_id]
        if faulted:
            state.faulted = True
        state.remaining -= 1
        if state.remaining <= 0:
            self._finalize(frame_id)

    def _finalize(self, frame_id: str) -> None:
        state = self._states.pop(frame_id)
        self._pending_ids.discard(frame_id)
        if state.faulted:
            self.faulted += 1
        else:
            self.delivered += 1

    # --- introspection -------------------------------------------------

    def accounting(self) -> dict[str, int]:
        return {
            "accepted": self.accepted,
            "delivered": self.delivered,
            "pending": len(self._pending_ids),
            "faulted": self.faulted,
        }

    def structural_pending(self) -> int:
        """Count pending frames from the queues and hold buffers directly."""
        ids = {q.frame.frame_id for lane in self._lanes for q in lane}
        for st in self._reasm.values():
            ids.update(q.frame.frame_id for q in st.held.values())
        return len(ids)

    def check_conservation(self) -> None:
        acc = self.accounting()
        if acc["accepted"] != acc["delivered"] + acc["pending"] + acc["faulted"]:
            raise AssertionError(f"conservation violated: {acc}")
        if acc["pending"] != self.structural_pending():
            raise AssertionError(
                f"pending mismatch: counted {acc['pending']}, structural {self.structural_pending()}"
            )

    def metrics(self) -> dict:
        lat = sorted(self._latencies_ns)

        def pct(p: float) -> int:
            if not lat:
                return 0
            return lat[min(len(lat) - 1, int(p * len(lat)))]

        return {
            **self.accounting(),
            "depth_by_priority": {p.name: self._depth(p) for p in Priority},
            "peak_depth_by_priority": {p.name: self._peak_depth[p] for p in Priority},
            "per_lane_delivered": list(self._per_lane_delivered),
            "latency_ns": {
                "count": len(lat),
                "max": lat[-1] if lat else 0,
                "mean": sum(lat) // len(lat) if lat else 0,
                "p50": pct(0.50),
                "p99": pct(0.99),
            },
            "fault_events": len(self.fault_events),
        }


class StreamSender:
    """Per-(source, stream) counter that builds frames with contiguous seq."""

    def __init__(self, fabric: Fabric, source: str, stream_id: str):
        self.fabric = fabric
        self.source = source
        self.stream_id = stream_id
        self._seq = 0
        self._n = 0

    def next_frame(
        self,
        destinations: frozenset[str],
        payload,
        priority: Priority = Priority.DATA,
    ) -> FabricFrame:
        self._seq += 1
        self._n += 1
        return FabricFrame(
            frame_id=f"{self.source}/{self.stream_id}#{self._n}",
            source=self.source,
            destinations=destinations,
            stream_id=self.stream_id,
            seq=self._seq,
            priority=priority,
            sent_at_ns=self.fabric.clock.now_ns(),
            payload=payload,
        )

    def send(self, destinations: frozenset[str], payload, priority: Priority = Priority.DATA) -> SendResult:
        result = self.fabric.send(self.next_frame(destinations, payload, priority))
        if not result.accepted:
            # the seq was consumed by a rejected frame; step back so the
            # stream stays contiguous for the next attempt
            self._seq -= 1
        return result

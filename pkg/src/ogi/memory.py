"""Short-term and long-term memory.

Short-term memory is the kernel's shared whiteboard: a bounded LRU store of
keyed entries, each carrying a payload, a context signature, and a strength.
Every write bumps a monotonic revision counter; the merged signatures of all
live entries form the current context. Eviction consolidates entries whose
strength clears the threshold into long-term memory and drops the rest, so
nothing leaves the whiteboard unaccounted.

Long-term memory is a graded store of traces recalled by cue similarity.
Recall strengthens (s += rate * (1 - s)), idle time decays exponentially
toward a floor, and traces whose cues sit close together get mutual links.

Well-known STM key conventions live here so every component agrees on them:

* io.<adapter>       perception summaries written on ingest
* auto.status        the running procedure's last status report
* interrupt.<id>     staged interrupts awaiting executive attention
* exec.directive.<id> the executive's action monologue
* exec.complete      goal-completion gate feature
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

from . import config as defaults
from .errors import RestoreError, ValidationError
from .modality import (
    ModalityPayload,
    canonical_json,
    merge_signatures,
    payload_from_obj,
    payload_to_obj,
    signature_divergence,
    validate_signature,
)

log = logging.getLogger(__name__)

IO_PREFIX = "io."
STATUS_KEY = "auto.status"
INTERRUPT_PREFIX = "interrupt."
DIRECTIVE_PREFIX = "exec.directive."
COMPLETE_KEY = "exec.complete"

EntryPayload = Union[ModalityPayload, dict]


@dataclass
class StmEntry:
    key: str
    payload: EntryPayload
    signature: dict[str, float]
    strength: float
    author: str
    revision: int = 0
    last_touched_ns: int = 0


@dataclass(frozen=True)
class ContextSnapshot:
    """Deterministic projection of STM contents at one revision."""

    revision: int
    features: Mapping[str, float]
    active_procedure: Optional[str]
    pending_interrupt: bool


def _entry_to_obj(entry: StmEntry) -> dict:
    if isinstance(entry.payload, ModalityPayload):
        payload_obj: dict = {"payload_type": "modality", "value": payload_to_obj(entry.payload)}
    else:
        payload_obj = {"payload_type": "record", "value": entry.payload}
    return {
        "key": entry.key,
        "payload": payload_obj,
        "signature": entry.signature,
        "strength": entry.strength,
        "author": entry.author,
        "revision": entry.revision,
        "last_touched_ns": entry.last_touched_ns,
    }


def _entry_from_obj(obj: Mapping) -> StmEntry:
    payload_obj = obj["payload"]
    if payload_obj["payload_type"] == "modality":
        payload: EntryPayload = payload_from_obj(payload_obj["value"])
    else:
        payload = dict(payload_obj["value"])
    return StmEntry(
        key=str(obj["key"]),
        payload=payload,
        signature={str(k): float(v) for k, v in obj["signature"].items()},
        strength=float(obj["strength"]),
        author=str(obj["author"]),
        revision=int(obj["revision"]),
        last_touched_ns=int(obj["last_touched_ns"]),
    )


class ShortTermMemory:
    """Bounded LRU whiteboard with consolidate-on-evict."""

    def __init__(
        self,
        clock,
        capacity: int = defaults.STM_CAPACITY,
        consolidation_threshold: float = defaults.CONSOLIDATION_THRESHOLD,
        consolidator: Optional[Callable[[StmEntry], None]] = None,
    ):
        if capacity < 1:
            raise ValidationError("stm capacity must be >= 1")
        self.capacity = capacity
        self.consolidation_threshold = consolidation_threshold
        self._clock = clock
        self._consolidator = consolidator
        self._entries: "OrderedDict[str, StmEntry]" = OrderedDict()
        self._revision = 0
        self.consolidated_count = 0
        self.dropped_count = 0
        self.peak_occupancy = 0

    def set_consolidator(self, consolidator: Callable[[StmEntry], None]) -> None:
        self._consolidator = consolidator

    @property
    def revision(self) -> int:
        return self._revision

    def occupancy(self) -> int:
        return len(self._entries)

    def put(
        self,
        key: str,
        payload: EntryPayload,
        signature: Mapping[str, float],
        strength: float,
        author: str,
    ) -> int:
        """Write or overwrite an entry; returns the new revision."""
        if not key:
            raise ValidationError("entry key must be non-empty")
        problems = validate_signature(signature)
        if problems:
            raise ValidationError(problems)
        if not (math.isfinite(strength) and 0.0 <= strength <= 1.0):
            raise ValidationError("entry strength must lie in [0, 1]")
        if not isinstance(payload, (ModalityPayload, dict)):
            raise ValidationError("entry payload must be a ModalityPayload or a record dict")
        self._revision += 1
        entry = StmEntry(
            key=key,
            payload=payload,
            signature=dict(signature),
            strength=strength,
            author=author,
            revision=self._revision,
            last_touched_ns=self._clock.now_ns(),
        )
        if key in self._entries:
            del self._entries[key]
        self._entries[key] = entry
        while len(self._entries) > self.capacity:
            self._evict_oldest()
        if len(self._entries) > self.peak_occupancy:
            self.peak_occupancy = len(self._entries)
        return self._revision

    def _evict_oldest(self) -> None:
        _, entry = self._entries.popitem(last=False)
        if entry.strength >= self.consolidation_threshold and self._consolidator is not None:
            self._consolidator(entry)
            self.consolidated_count += 1
        else:
            self.dropped_count += 1

    def get(self, key: str) -> Optional[StmEntry]:
        # reads do not reorder eviction; only writes touch
        return self._entries.get(key)

    def entries(self) -> tuple[StmEntry, ...]:
        return tuple(self._entries.values())

    def entries_by_prefix(self, prefix: str) -> tuple[StmEntry, ...]:
        return tuple(e for e in self._entries.values() if e.key.startswith(prefix))

    def snapshot(self) -> ContextSnapshot:
        features = merge_signatures(*(e.signature for e in self._entries.values()))
        active = None
        status = self._entries.get(STATUS_KEY)
        if status is not None and isinstance(status.payload, dict):
            if status.payload.get("state") == "Running":
                active = status.payload.get("proc_id")
        pending = any(
            isinstance(e.payload, dict) and e.payload.get("handled") is False
            for e in self._entries.values()
            if e.key.startswith(INTERRUPT_PREFIX)
        )
        return ContextSnapshot(
            revision=self._revision,
            features=features,
            active_procedure=active,
            pending_interrupt=pending,
        )

    # --- persistence ---------------------------------------------------

    def persist(self, path: str) -> None:
        doc = {
            "revision": self._revision,
            "entries": [_entry_to_obj(e) for e in self._entries.values()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(doc))

    def restore(self, path: str) -> None:
        """Replace contents from a persisted image.

        A corrupt image raises RestoreError; the store is left empty with
        the revision counter advanced past any revision salvageable from
        the bytes, so revisions never run backwards after a bad restore.
        """
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        try:
            doc = json.loads(raw)
            entries = [_entry_from_obj(o) for o in doc["entries"]]
            revision = int(doc["revision"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
            salvaged = [int(m) for m in re.findall(r'"revision":\s*(\d+)', raw)]
            floor = max(salvaged + [self._revision])
            self._entries.clear()
            self._revision = floor + 1
            raise RestoreError(f"corrupt stm image: {exc}; revision advanced to {self._revision}") from exc
        self._entries.clear()
        for entry in entries:
            self._entries[entry.key] = entry
        self._revision = max(revision, self._revision)


@dataclass
class MemoryTrace:
    trace_id: str
    content: EntryPayload
    cue: dict[str, float]
    strength: float
    stored_at_ns: int
    links: set[str] = field(default_factory=set)


class LongTermMemory:
    """Graded trace store: recall by cue, strengthen on use, decay over time."""

    def __init__(
        self,
        clock,
        strengthen_rate: float = defaults.STRENGTHEN_RATE,
        decay_rate_per_s: float = defaults.DECAY_RATE_PER_S,
        strength_floor: float = defaults.STRENGTH_FLOOR,
        link_threshold: float = defaults.LINK_THRESHOLD,
    ):
        self._clock = clock
        self.strengthen_rate = strengthen_rate
        self.decay_rate_per_s = decay_rate_per_s
        self.strength_floor = strength_floor
        self.link_threshold = link_threshold
        self._traces: "OrderedDict[str, MemoryTrace]" = OrderedDict()
        self._counter = 0

    def __len__(self) -> int:
        return len(self._traces)

    def store(self, content: EntryPayload, cue: Mapping[str, float], strength: float) -> MemoryTrace:
        problems = validate_signature(cue)
        if problems:
            raise ValidationError(problems)
        if not (math.isfinite(strength) and 0.0 <= strength <= 1.0):
            raise ValidationError("trace strength must lie in [0, 1]")
        self._counter += 1
        trace = MemoryTrace(
            trace_id=f"t{self._counter}",
            content=content,
            cue=dict(cue),
            strength=strength,
            stored_at_ns=self._clock.now_ns(),
        )
        for other in self._traces.values():
            if signature_divergence(trace.cue, other.cue) <= self.link_threshold:
                trace.links.add(other.trace_id)
                other.links.add(trace.trace_id)
        self._traces[trace.trace_id] = trace
        return trace

    def trace(self, trace_id: str) -> Optional[MemoryTrace]:
        return self._traces.get(trace_id)

    def traces(self) -> tuple[MemoryTrace, ...]:
        return tuple(self._traces.values())

    def recall(self, cue: Mapping[str, float], limit: int = defaults.RECALL_LIMIT) -> list[MemoryTrace]:
        """Top traces by strength * (1 - cue divergence); recall strengthens.

        Ties go to the older trace. Traces with zero score (fully divergent
        or fully decayed-to-zero strength) are never returned.
        """
        scored = []
        for index, trace in enumerate(self._traces.values()):
            score = trace.strength * (1.0 - signature_divergence(cue, trace.cue))
            if score > 0.0:
                scored.append((-score, trace.stored_at_ns, index, trace))
        scored.sort(key=lambda row: row[:3])
        picked = [trace for _, _, _, trace in scored[:limit]]
        for trace in picked:
            trace.strength = trace.strength + self.strengthen_rate * (1.0 - trace.strength)
        return picked

    def decay_tick(self, elapsed_ns: int) -> int:
        """Exponential decay toward the floor; returns how many weakened."""
        if elapsed_ns < 0:
            raise ValidationError("elapsed time cannot be negative")
        factor = math.exp(-self.decay_rate_per_s * (elapsed_ns / 1e9))
        weakened = 0
        for trace in self._traces.values():
            decayed = max(self.strength_floor, trace.strength * factor)
            if decayed < trace.strength:
                trace.strength = decayed
                weakened += 1
        return weakened

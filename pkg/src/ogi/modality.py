"""Modality payloads, fabric frames, and context signatures.

This is the shared vocabulary of the kernel. Everything that crosses a
module boundary is one of three shapes:

* ModalityPayload: a typed piece of sensory or actuator data (text, numeric
  series, image grid, audio samples, tactile contacts, or a composite of
  parts).
* FabricFrame: an immutable envelope the interconnect moves between
  endpoints, carrying either a ModalityPayload or a small ControlBody.
* context signature: a plain dict[str, float] of named feature activations
  in [0, 1]. Signatures are compared with an L-infinity metric and merged
  with a per-key max, so they compose without normalization bookkeeping.

All payload and signature values must be finite; NaN or infinite values are
rejected at validation time rather than allowed to poison downstream math.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping, Optional, Union

from .errors import ValidationError

MAX_COMPOSITE_DEPTH = 4


class ModalityKind(Enum):
    TEXT = "Text"
    NUMERIC = "Numeric"
    IMAGE = "Image"
    AUDIO = "Audio"
    TACTILE = "Tactile"
    COMPOSITE = "Composite"


class Priority(IntEnum):
    """Fabric scheduling class; lower value wins the queue."""

    INTERRUPT = 0
    CONTROL = 1
    DATA = 2


@dataclass(frozen=True)
class ModalityPayload:
    """One unit of typed data.

    Exactly the fields for the declared kind are set; the rest stay None.
    Use the classmethod constructors rather than filling fields by hand.
    """

    kind: ModalityKind
    text: Optional[str] = None
    values: Optional[tuple[float, ...]] = None
    width: Optional[int] = None
    height: Optional[int] = None
    grid: Optional[tuple[float, ...]] = None
    samples: Optional[tuple[float, ...]] = None
    sample_rate: Optional[int] = None
    contacts: Optional[tuple[tuple[float, float], ...]] = None
    parts: Optional[tuple["ModalityPayload", ...]] = None

    @classmethod
    def of_text(cls, text: str) -> "ModalityPayload":
        return cls(kind=ModalityKind.TEXT, text=text)

    @classmethod
    def of_numeric(cls, values: Iterable[float]) -> "ModalityPayload":
        return cls(kind=ModalityKind.NUMERIC, values=tuple(float(v) for v in values))

    @classmethod
    def of_image(cls, width: int, height: int, grid: Iterable[float]) -> "ModalityPayload":
        return cls(
            kind=ModalityKind.IMAGE,
            width=int(width),
            height=int(height),
            grid=tuple(float(v) for v in grid),
        )

    @classmethod
    def of_audio(cls, samples: Iterable[float], sample_rate: int) -> "ModalityPayload":
        return cls(
            kind=ModalityKind.AUDIO,
            samples=tuple(float(v) for v in samples),
            sample_rate=int(sample_rate),
        )

    @classmethod
    def of_tactile(cls, contacts: Iterable[tuple[float, float]]) -> "ModalityPayload":
        return cls(
            kind=ModalityKind.TACTILE,
            contacts=tuple((float(p), float(q)) for p, q in contacts),
        )

    @classmethod
    def of_composite(cls, parts: Iterable["ModalityPayload"]) -> "ModalityPayload":
        return cls(kind=ModalityKind.COMPOSITE, parts=tuple(parts))


def _finite(values: Iterable[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def _composite_depth(payload: ModalityPayload) -> int:
    if payload.kind is not ModalityKind.COMPOSITE or not payload.parts:
        return 0
    return 1 + max(_composite_depth(p) for p in payload.parts)


def validate_payload(payload: ModalityPayload) -> list[str]:
    """Return every problem found; an empty list means the payload is valid."""
    problems: list[str] = []
    kind = payload.kind
    if kind is ModalityKind.TEXT:
        if not isinstance(payload.text, str):
            problems.append("Text payload requires a string")
    elif kind is ModalityKind.NUMERIC:
        if payload.values is None:
            problems.append("Numeric payload requires values")
        elif not _finite(payload.values):
            problems.append("Numeric values must be finite")
    elif kind is ModalityKind.IMAGE:
        if payload.width is None or payload.height is None or payload.grid is None:
            problems.append("Image payload requires width, height, and grid")
        else:
            if payload.width < 1 or payload.height < 1:
                problems.append("Image dimensions must be at least 1x1")
            if len(payload.grid) != (payload.width or 0) * (payload.height or 0):
                problems.append("Image grid length must equal width*height")
            if not _finite(payload.grid):
                problems.append("Image cells must be finite")
            elif any(not (0.0 <= v <= 1.0) for v in payload.grid):
                problems.append("Image cells must lie in [0, 1]")
    elif kind is ModalityKind.AUDIO:
        if payload.samples is None or payload.sample_rate is None:
            problems.append("Audio payload requires samples and sample_rate")
        else:
            if payload.sample_rate < 1:
                problems.append("Audio sample_rate must be positive")
            if not _finite(payload.samples):
                problems.append("Audio samples must be finite")
    elif kind is ModalityKind.TACTILE:
        if payload.contacts is None:
            problems.append("Tactile payload requires contacts")
        else:
            for pos, pressure in payload.contacts:
                if not (math.isfinite(pos) and math.isfinite(pressure)):
                    problems.append("Tactile contacts must be finite")
                    break
                if not (0.0 <= pressure <= 1.0):
                    problems.append("Tactile pressure must lie in [0, 1]")
                    break
    elif kind is ModalityKind.COMPOSITE:
        if not payload.parts or len(payload.parts) < 2:
            problems.append("Composite payload requires at least 2 parts")
        else:
            if _composite_depth(payload) > MAX_COMPOSITE_DEPTH:
                problems.append(f"Composite nesting exceeds depth {MAX_COMPOSITE_DEPTH}")
            for i, part in enumerate(payload.parts):
                for problem in validate_payload(part):
                    problems.append(f"part {i}: {problem}")
    else:
        problems.append(f"unknown kind {kind!r}")
    return problems


def require_valid_payload(payload: ModalityPayload) -> None:
    problems = validate_payload(payload)
    if problems:
        raise ValidationError(problems)


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def summarize_to_signature(payload: ModalityPayload, prefix: str) -> dict[str, float]:
    """Project a payload onto a small signature under the given prefix.

    Every summary carries the kind feature "<prefix>.<Kind>" at 1.0, plus a
    few clamped scalar features characteristic of the kind:

    * Text: length scaled by 1/1024
    * Numeric: mean of the values (0 for an empty series)
    * Image: mean cell intensity
    * Audio: mean absolute sample amplitude
    * Tactile: max contact pressure
    * Composite: per-key max over the part summaries under the same prefix

    The summary of a payload depends only on the payload and prefix, never on
    kernel state, so two runs summarize identically.
    """
    kind = payload.kind
    sig: dict[str, float] = {f"{prefix}.{kind.value}": 1.0}
    if kind is ModalityKind.TEXT:
        sig[f"{prefix}.len"] = _clamp01(len(payload.text or "") / 1024.0)
    elif kind is ModalityKind.NUMERIC:
        vals = payload.values or ()
        mean = sum(vals) / len(vals) if vals else 0.0
        sig[f"{prefix}.mean"] = _clamp01(mean)
    elif kind is ModalityKind.IMAGE:
        grid = payload.grid or ()
        mean = sum(grid) / len(grid) if grid else 0.0
        sig[f"{prefix}.intensity"] = _clamp01(mean)
    elif kind is ModalityKind.AUDIO:
        samples = payload.samples or ()
        mean = sum(abs(s) for s in samples) / len(samples) if samples else 0.0
        sig[f"{prefix}.amplitude"] = _clamp01(mean)
    elif kind is ModalityKind.TACTILE:
        contacts = payload.contacts or ()
        peak = max((pressure for _, pressure in contacts), default=0.0)
        sig[f"{prefix}.pressure"] = _clamp01(peak)
    elif kind is ModalityKind.COMPOSITE:
        merged = merge_signatures(*(summarize_to_signature(p, prefix) for p in payload.parts or ()))
        merged[f"{prefix}.{kind.value}"] = 1.0
        sig = merged
    return sig


def validate_signature(features: Mapping[str, float]) -> list[str]:
    problems = []
    for key, value in features.items():
        if not isinstance(key, str) or not key:
            problems.append("signature keys must be non-empty strings")
            break
    for key, value in features.items():
        if not math.isfinite(value) or not (0.0 <= value <= 1.0):
            problems.append(f"feature {key!r} must lie in [0, 1]")
    return problems


def merge_signatures(*signatures: Mapping[str, float]) -> dict[str, float]:
    """Union of feature keys, per-key max. Commutative and associative."""
    merged: dict[str, float] = {}
    for sig in signatures:
        for key, value in sig.items():
            prev = merged.get(key)
            if prev is None or value > prev:
                merged[key] = value
    return merged


def signature_divergence(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    """L-infinity distance over the union of keys; missing keys read 0."""
    worst = 0.0
    for key in a.keys() | b.keys():
        gap = abs(a.get(key, 0.0) - b.get(key, 0.0))
        if gap > worst:
            worst = gap
    return worst


def reference_divergence(reference: Mapping[str, float], observed: Mapping[str, float]) -> float:
    """L-infinity distance restricted to the reference's keys.

    Used where one side declares which features it cares about (procedure
    triggers and expectations); features the reference never mentions cannot
    contribute. An empty reference diverges from nothing.
    """
    worst = 0.0
    for key, want in reference.items():
        gap = abs(want - observed.get(key, 0.0))
        if gap > worst:
            worst = gap
    return worst


@dataclass(frozen=True)
class ControlBody:
    """Small structured message for kernel-internal frames.

    kinds in use: "interrupt", "dispatch", "stream-fault", "feedback".
    """

    control_kind: str
    data: Mapping[str, object] = field(default_factory=dict)


FramePayload = Union[ModalityPayload, ControlBody]


@dataclass(frozen=True)
class FabricFrame:
    frame_id: str
    source: str
    destinations: frozenset[str]
    stream_id: str
    seq: int
    priority: Priority
    sent_at_ns: int
    payload: FramePayload


def validate_frame(frame: FabricFrame) -> list[str]:
    problems = []
    if not frame.frame_id:
        problems.append("frame_id must be non-empty")
    if not frame.source:
        problems.append("source must be non-empty")
    if not frame.stream_id:
        problems.append("stream_id must be non-empty")
    if frame.seq < 1:
        problems.append("seq must be >= 1")
    if isinstance(frame.payload, ModalityPayload):
        problems.extend(validate_payload(frame.payload))
    elif isinstance(frame.payload, ControlBody):
        if frame.priority is Priority.INTERRUPT and frame.payload.control_kind != "interrupt":
            problems.append("Interrupt priority is reserved for interrupt bodies")
    else:
        problems.append("payload must be a ModalityPayload or ControlBody")
    if frame.priority is Priority.INTERRUPT and not isinstance(frame.payload, ControlBody):
        problems.append("Interrupt priority is reserved for interrupt bodies")
    return problems


# --- canonical JSON codecs ---------------------------------------------
# Canonical form: sorted keys, no whitespace variance, floats via repr-style
# json defaults. Used for persistence, the control protocol, and byte-exact
# determinism comparisons.


def payload_to_obj(payload: ModalityPayload) -> dict:
    kind = payload.kind
    obj: dict[str, object] = {"kind": kind.value}
    if kind is ModalityKind.TEXT:
        obj["text"] = payload.text
    elif kind is ModalityKind.NUMERIC:
        obj["values"] = list(payload.values or ())
    elif kind is ModalityKind.IMAGE:
        obj["width"] = payload.width
        obj["height"] = payload.height
        obj["grid"] = list(payload.grid or ())
    elif kind is ModalityKind.AUDIO:
        obj["samples"] = list(payload.samples or ())
        obj["sample_rate"] = payload.sample_rate
    elif kind is ModalityKind.TACTILE:
        obj["contacts"] = [[p, q] for p, q in (payload.contacts or ())]
    elif kind is ModalityKind.COMPOSITE:
        obj["parts"] = [payload_to_obj(p) for p in (payload.parts or ())]
    return obj


def payload_from_obj(obj: Mapping[str, object]) -> ModalityPayload:
    try:
        kind = ModalityKind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"bad payload kind: {exc}") from exc
    try:
        if kind is ModalityKind.TEXT:
            return ModalityPayload.of_text(str(obj["text"]))
        if kind is ModalityKind.NUMERIC:
            return ModalityPayload.of_numeric(obj["values"])  # type: ignore[arg-type]
        if kind is ModalityKind.IMAGE:
            return ModalityPayload.of_image(obj["width"], obj["height"], obj["grid"])  # type: ignore[arg-type]
        if kind is ModalityKind.AUDIO:
            return ModalityPayload.of_audio(obj["samples"], obj["sample_rate"])  # type: ignore[arg-type]
        if kind is ModalityKind.TACTILE:
            return ModalityPayload.of_tactile(obj["contacts"])  # type: ignore[arg-type]
        return ModalityPayload.of_composite(payload_from_obj(p) for p in obj["parts"])  # type: ignore[union-attr]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed {kind.value} payload: {exc}") from exc


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))

"""Scenario documents: a JSON description of a kernel plus a timed script.

A scenario names the modules, program, adapters, procedures, long-term
seeds, and a list of timed injections, then states expectations about
what the run must produce. load_scenario() validates the whole document
and reports every problem at once; build_kernel() turns a parsed
scenario into a ready kernel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from . import config as defaults
from .autonomous import StoredProcedure
from .clock import NS_PER_MS
from .dps import ExternalProgram, ModuleRegistry, ModuleSpec, validate_program
from .errors import ValidationError
from .fabric import DeliveryMode, FabricConfig
from .io_integration import ActionDescriptor, AdapterDescriptor, Direction
from .kernel import Kernel
from .modality import (
    ModalityKind,
    ModalityPayload,
    Priority,
    payload_from_obj,
    validate_signature,
)

EXPECTATION_KINDS = ("interrupt-count", "directive-count", "metric-bound", "goal-complete")


@dataclass(frozen=True)
class InjectEvent:
    at_ns: int
    adapter_id: str
    payload: ModalityPayload


@dataclass(frozen=True)
class LtmSeed:
    content: ModalityPayload
    cue: Mapping[str, float]
    strength: float


@dataclass(frozen=True)
class Expectation:
    kind: str
    params: dict


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    seed: int
    horizon_ns: int
    registry: ModuleRegistry
    program: ExternalProgram
    adapters: tuple[AdapterDescriptor, ...]
    procedures: tuple[StoredProcedure, ...]
    ltm_seeds: tuple[LtmSeed, ...]
    events: tuple[InjectEvent, ...]
    fabric: FabricConfig
    stm_capacity: int = defaults.STM_CAPACITY
    consolidation_threshold: float = defaults.CONSOLIDATION_THRESHOLD
    match_threshold: float = defaults.MATCH_THRESHOLD
    fail_budget: int = defaults.STEP_FAIL_BUDGET
    step_interval_ns: int = defaults.STEP_INTERVAL_NS
    heartbeat_ns: int = defaults.HEARTBEAT_NS
    expectations: tuple[Expectation, ...] = ()


def _signature(obj, label: str, problems: list[str]) -> dict[str, float]:
    if not isinstance(obj, dict):
        problems.append(f"{label} must be an object of feature -> value")
        return {}
    try:
        signature = {str(k): float(v) for k, v in obj.items()}
    except (TypeError, ValueError):
        problems.append(f"{label} values must be numbers")
        return {}
    for issue in validate_signature(signature):
        problems.append(f"{label}: {issue}")
    return signature


def _payload(obj, label: str, problems: list[str]) -> Optional[ModalityPayload]:
    if not isinstance(obj, dict):
        problems.append(f"{label} must be a payload object")
        return None
    try:
        return payload_from_obj(obj)
    except ValidationError as exc:
        problems.append(f"{label}: {exc}")
        return None


def _steps(raw, label: str, problems: list[str]) -> tuple[ActionDescriptor, ...]:
    if not isinstance(raw, list) or not raw:
        problems.append(f"{label}.steps must be a non-empty list")
        return ()
    steps = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "adapter_id" not in item:
            problems.append(f"{label}.steps[{i}] needs an adapter_id")
            continue
        payload = _payload(item.get("payload"), f"{label}.steps[{i}].payload", problems)
        if payload is None:
            continue
        steps.append(
            ActionDescriptor(
                adapter_id=str(item["adapter_id"]),
                payload=payload,
                feedback_requested=bool(item.get("feedback_requested", False)),
            )
        )
    return tuple(steps)


def parse_scenario(obj: Mapping) -> Scenario:
    problems: list[str] = []
    if not isinstance(obj, Mapping):
        raise ValidationError("scenario must be a JSON object")

    name = str(obj.get("name", "")).strip()
    if not name:
        problems.append("name is required")
    horizon_ms = obj.get("horizon_ms", 1000)
    if not isinstance(horizon_ms, (int, float)) or horizon_ms <= 0:
        problems.append("horizon_ms must be a positive number")
        horizon_ms = 1000
    seed = obj.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed must be an integer")
        seed = 0

    modules = []
    raw_modules = obj.get("modules")
    if not isinstance(raw_modules, list) or not raw_modules:
        problems.append("modules must be a non-empty list")
    else:
        for i, item in enumerate(raw_modules):
            if not isinstance(item, dict):
                problems.append(f"modules[{i}] must be an object")
                continue
            kinds = set()
            for kind_name in item.get("kinds", []):
                try:
                    kinds.add(ModalityKind(kind_name))
                except ValueError:
                    problems.append(f"modules[{i}]: unknown kind {kind_name!r}")
            modules.append(
                ModuleSpec(
                    module_id=str(item.get("module_id", "")),
                    kinds=frozenset(kinds),
                    description=str(item.get("description", "")),
                )
            )
    try:
        registry = ModuleRegistry(modules)
    except Exception as exc:
        problems.append(f"modules: {exc}")
        registry = None

    program = None
    raw_program = obj.get("program")
    if not isinstance(raw_program, dict):
        problems.append("program must be an object")
    else:
        try:
            program = ExternalProgram.from_obj(raw_program)
        except ValidationError as exc:
            problems.append(str(exc))
    if program is not None and registry is not None:
        problems += validate_program(program, registry)

    adapters = []
    seen_adapters = set()
    for i, item in enumerate(obj.get("adapters", [])):
        if not isinstance(item, dict):
            problems.append(f"adapters[{i}] must be an object")
            continue
        adapter_id = str(item.get("adapter_id", ""))
        if not adapter_id:
            problems.append(f"adapters[{i}] needs an adapter_id")
            continue
        if adapter_id in seen_adapters:
            problems.append(f"adapters[{i}]: duplicate adapter {adapter_id!r}")
            continue
        seen_adapters.add(adapter_id)
        try:
            direction = Direction(item.get("direction", "Input"))
        except ValueError:
            problems.append(f"adapters[{i}]: unknown direction {item.get('direction')!r}")
            continue
        try:
            modality = ModalityKind(item.get("modality", "Text"))
        except ValueError:
            problems.append(f"adapters[{i}]: unknown modality {item.get('modality')!r}")
            continue
        adapters.append(
            AdapterDescriptor(
                adapter_id=adapter_id,
                direction=direction,
                modality=modality,
                rate_limit_per_s=int(item.get("rate_limit_per_s", defaults.RATE_LIMIT_PER_S)),
            )
        )

    procedures = []
    for i, item in enumerate(obj.get("procedures", [])):
        if not isinstance(item, dict):
            problems.append(f"procedures[{i}] must be an object")
            continue
        label = f"procedures[{i}]"
        procedures.append(
            StoredProcedure(
                proc_id=str(item.get("proc_id", "")),
                trigger=_signature(item.get("trigger", {}), f"{label}.trigger", problems),
                expected=_signature(item.get("expected", {}), f"{label}.expected", problems),
                steps=_steps(item.get("steps"), label, problems),
                loop=bool(item.get("loop", False)),
                max_iterations=int(item.get("max_iterations", 1)),
            )
        )
        known = seen_adapters
        for step in procedures[-1].steps:
            if step.adapter_id not in known:
                problems.append(f"{label} emits to unknown adapter {step.adapter_id!r}")

    ltm_seeds = []
    for i, item in enumerate(obj.get("ltm", [])):
        if not isinstance(item, dict):
            problems.append(f"ltm[{i}] must be an object")
            continue
        content = _payload(item.get("content"), f"ltm[{i}].content", problems)
        cue = _signature(item.get("cue", {}), f"ltm[{i}].cue", problems)
        strength = item.get("strength", 0.5)
        if not isinstance(strength, (int, float)) or not (0.0 <= strength <= 1.0):
            problems.append(f"ltm[{i}].strength must lie in [0, 1]")
            strength = 0.5
        if content is not None:
            ltm_seeds.append(LtmSeed(content=content, cue=cue, strength=float(strength)))

    events = []
    for i, item in enumerate(obj.get("events", [])):
        if not isinstance(item, dict):
            problems.append(f"events[{i}] must be an object")
            continue
        at_ms = item.get("at_ms")
        if not isinstance(at_ms, (int, float)) or at_ms < 0:
            problems.append(f"events[{i}].at_ms must be a non-negative number")
            continue
        adapter_id = str(item.get("adapter_id", ""))
        if adapter_id not in seen_adapters:
            problems.append(f"events[{i}] targets unknown adapter {adapter_id!r}")
            continue
        payload = _payload(item.get("payload"), f"events[{i}].payload", problems)
        if payload is None:
            continue
        events.append(InjectEvent(at_ns=int(at_ms * NS_PER_MS), adapter_id=adapter_id, payload=payload))
    events.sort(key=lambda e: e.at_ns)

    raw_fabric = obj.get("fabric", {})
    fabric = FabricConfig(seed=seed)
    if not isinstance(raw_fabric, dict):
        problems.append("fabric must be an object")
    else:
        mode_name = raw_fabric.get("mode", "zero-latency")
        mode = {"zero-latency": DeliveryMode.ZERO_LATENCY, "queued": DeliveryMode.QUEUED}.get(mode_name)
        if mode is None:
            problems.append(f"fabric.mode must be 'zero-latency' or 'queued', not {mode_name!r}")
            mode = DeliveryMode.ZERO_LATENCY
        capacity = {
            Priority.INTERRUPT: defaults.CAPACITY_INTERRUPT,
            Priority.CONTROL: defaults.CAPACITY_CONTROL,
            Priority.DATA: defaults.CAPACITY_DATA,
        }
        raw_capacity = raw_fabric.get("capacity", {})
        if isinstance(raw_capacity, dict):
            names = {"interrupt": Priority.INTERRUPT, "control": Priority.CONTROL, "data": Priority.DATA}
            for key, value in raw_capacity.items():
                if key not in names or not isinstance(value, int) or value < 1:
                    problems.append(f"fabric.capacity[{key!r}] must be a positive integer")
                else:
                    capacity[names[key]] = value
        else:
            problems.append("fabric.capacity must be an object")
        fabric = FabricConfig(
            lanes=int(raw_fabric.get("lanes", defaults.LANE_COUNT)),
            mode=mode,
            capacity=capacity,
            delay_min_ms=float(raw_fabric.get("delay_min_ms", 1.0)),
            delay_max_ms=float(raw_fabric.get("delay_max_ms", 5.0)),
            gap_budget=int(raw_fabric.get("gap_budget", defaults.GAP_BUDGET)),
            seed=seed,
        )
        if fabric.lanes < 1:
            problems.append("fabric.lanes must be >= 1")
        if fabric.delay_min_ms > fabric.delay_max_ms:
            problems.append("fabric.delay_min_ms must not exceed delay_max_ms")

    raw_stm = obj.get("stm", {})
    stm_capacity = defaults.STM_CAPACITY
    consolidation_threshold = defaults.CONSOLIDATION_THRESHOLD
    if isinstance(raw_stm, dict):
        stm_capacity = int(raw_stm.get("capacity", stm_capacity))
        consolidation_threshold = float(raw_stm.get("consolidation_threshold", consolidation_threshold))
        if stm_capacity < 1:
            problems.append("stm.capacity must be >= 1")
    else:
        problems.append("stm must be an object")

    raw_auto = obj.get("autonomous", {})
    match_threshold = defaults.MATCH_THRESHOLD
    fail_budget = defaults.STEP_FAIL_BUDGET
    step_interval_ns = defaults.STEP_INTERVAL_NS
    if isinstance(raw_auto, dict):
        match_threshold = float(raw_auto.get("match_threshold", match_threshold))
        fail_budget = int(raw_auto.get("fail_budget", fail_budget))
        step_interval_ms = raw_auto.get("step_interval_ms")
        if step_interval_ms is not None:
            if not isinstance(step_interval_ms, (int, float)) or step_interval_ms <= 0:
                problems.append("autonomous.step_interval_ms must be positive")
            else:
                step_interval_ns = int(step_interval_ms * NS_PER_MS)
    else:
        problems.append("autonomous must be an object")

    heartbeat_ms = obj.get("heartbeat_ms")
    heartbeat_ns = defaults.HEARTBEAT_NS
    if heartbeat_ms is not None:
        if not isinstance(heartbeat_ms, (int, float)) or heartbeat_ms <= 0:
            problems.append("heartbeat_ms must be positive")
        else:
            heartbeat_ns = int(heartbeat_ms * NS_PER_MS)

    expectations = []
    for i, item in enumerate(obj.get("expectations", [])):
        if not isinstance(item, dict) or item.get("kind") not in EXPECTATION_KINDS:
            problems.append(
                f"expectations[{i}].kind must be one of {', '.join(EXPECTATION_KINDS)}"
            )
            continue
        params = {k: v for k, v in item.items() if k != "kind"}
        kind = item["kind"]
        if kind == "directive-count" and not params.get("directive"):
            problems.append(f"expectations[{i}] needs a directive name")
            continue
        if kind == "metric-bound":
            if not params.get("path"):
                problems.append(f"expectations[{i}] needs a metrics path")
                continue
            if "min" not in params and "max" not in params:
                problems.append(f"expectations[{i}] needs min and/or max")
                continue
        expectations.append(Expectation(kind=kind, params=params))

    if problems:
        raise ValidationError(problems)
    assert registry is not None and program is not None
    return Scenario(
        name=name,
        description=str(obj.get("description", "")),
        seed=seed,
        horizon_ns=int(horizon_ms * NS_PER_MS),
        registry=registry,
        program=program,
        adapters=tuple(adapters),
        procedures=tuple(procedures),
        ltm_seeds=tuple(ltm_seeds),
        events=tuple(events),
        fabric=fabric,
        stm_capacity=stm_capacity,
        consolidation_threshold=consolidation_threshold,
        match_threshold=match_threshold,
        fail_budget=fail_budget,
        step_interval_ns=step_interval_ns,
        heartbeat_ns=heartbeat_ns,
        expectations=tuple(expectations),
    )


def load_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    return parse_scenario(obj)


def build_kernel(scenario: Scenario, clock=None) -> Kernel:
    kernel = Kernel(
        scenario.registry,
        scenario.program,
        procedures=scenario.procedures,
        adapters=scenario.adapters,
        fabric_config=scenario.fabric,
        clock=clock,
        stm_capacity=scenario.stm_capacity,
        consolidation_threshold=scenario.consolidation_threshold,
        match_threshold=scenario.match_threshold,
        fail_budget=scenario.fail_budget,
        step_interval_ns=scenario.step_interval_ns,
        heartbeat_ns=scenario.heartbeat_ns,
        seed=scenario.seed,
    )
    for seed in scenario.ltm_seeds:
        kernel.ltm.store(seed.content, seed.cue, seed.strength)
    return kernel

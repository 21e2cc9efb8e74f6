"""Module weighting and routing.

Each registered module gets a relevance score from the current context
features, the administered program, and the active operational profile:

    score_i = base_log_weights[i] + profile_delta[i]
              + sum of feature values whose key suffix names a kind module i declares

Scores pass through a temperature softmax to land on the probability
simplex; the routing table then keeps, per payload kind, the modules whose
weight clears the prune threshold (renormalized), falling back to the
single best module when nothing clears it. Administrators can force a kind
to one module via routing_overrides.

Two administration layers with different authority:

* apply_external_program requires the kernel's AdminIdentity capability and
  a strictly increasing version; every attempt is audited.
* select_profile is the executive's own lever and needs no administration;
  only the caller tagged "executive" may use it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from . import config as defaults
from .errors import (
    AuthorizationError,
    ConfigurationError,
    ValidationError,
    VersionConflictError,
)
from .modality import ModalityKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModuleSpec:
    module_id: str
    kinds: frozenset[ModalityKind]
    description: str = ""


class ModuleRegistry:
    """Ordered, immutable-after-build set of specialized modules."""

    def __init__(self, modules: Sequence[ModuleSpec]):
        if not modules:
            raise ConfigurationError("registry needs at least one module")
        ids = [m.module_id for m in modules]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate module ids")
        self._modules = tuple(modules)
        self._index = {m.module_id: i for i, m in enumerate(self._modules)}

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self):
        return iter(self._modules)

    def ids(self) -> tuple[str, ...]:
        return tuple(m.module_id for m in self._modules)

    def index_of(self, module_id: str) -> int:
        try:
            return self._index[module_id]
        except KeyError:
            raise ConfigurationError(f"unknown module {module_id!r}") from None

    def spec(self, module_id: str) -> ModuleSpec:
        return self._modules[self.index_of(module_id)]


class ProfileId(Enum):
    LOGICAL = "Logical"
    CREATIVE = "Creative"
    MOTOR = "Motor"
    NEUTRAL = "Neutral"


@dataclass(frozen=True)
class OperationalProfile:
    """Executive-side bias vector; capped so a profile can nudge, not drown."""

    profile_id: ProfileId
    deltas: tuple[float, ...]

    def validate(self, n_modules: int) -> list[str]:
        problems = []
        if len(self.deltas) != n_modules:
            problems.append(
                f"profile {self.profile_id.value} has {len(self.deltas)} deltas for {n_modules} modules"
            )
        for d in self.deltas:
            if not math.isfinite(d):
                problems.append(f"profile {self.profile_id.value} has a non-finite delta")
                break
            if abs(d) > defaults.PROFILE_CAP:
                problems.append(
                    f"profile {self.profile_id.value} delta {d} exceeds cap {defaults.PROFILE_CAP}"
                )
                break
        return problems


def neutral_profiles(n_modules: int) -> dict[ProfileId, OperationalProfile]:
    zeros = tuple(0.0 for _ in range(n_modules))
    return {pid: OperationalProfile(pid, zeros) for pid in ProfileId}


@dataclass(frozen=True)
class ExternalProgram:
    """Admin-administered behavior contract. Versions only move forward."""

    version: int
    primary_goal: str
    instructions: tuple[str, ...]
    base_log_weights: tuple[float, ...]
    routing_overrides: Mapping[str, str] = field(default_factory=dict)
    interrupt_threshold: float = 0.5
    temperature: float = defaults.TEMPERATURE

    def to_obj(self) -> dict:
        return {
            "version": self.version,
            "primary_goal": self.primary_goal,
            "instructions": list(self.instructions),
            "base_log_weights": list(self.base_log_weights),
            "routing_overrides": dict(self.routing_overrides),
            "interrupt_threshold": self.interrupt_threshold,
            "temperature": self.temperature,
        }

    @classmethod
    def from_obj(cls, obj: Mapping) -> "ExternalProgram":
        try:
            return cls(
                version=int(obj["version"]),
                primary_goal=str(obj["primary_goal"]),
                instructions=tuple(str(s) for s in obj.get("instructions", ())),
                base_log_weights=tuple(float(v) for v in obj["base_log_weights"]),
                routing_overrides=dict(obj.get("routing_overrides", {})),
                interrupt_threshold=float(obj.get("interrupt_threshold", 0.5)),
                temperature=float(obj.get("temperature", defaults.TEMPERATURE)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed program: {exc}") from exc


def validate_program(program: ExternalProgram, registry: ModuleRegistry) -> list[str]:
    problems = []
    if program.version < 1:
        problems.append("version must be >= 1")
    if len(program.base_log_weights) != len(registry):
        problems.append(
            f"base_log_weights has {len(program.base_log_weights)} entries for {len(registry)} modules"
        )
    if any(not math.isfinite(b) for b in program.base_log_weights):
        problems.append("base_log_weights must be finite")
    if not (program.temperature > 0 and math.isfinite(program.temperature)):
        problems.append("temperature must be positive")
    if not (0.0 < program.interrupt_threshold <= 1.0):
        problems.append("interrupt_threshold must lie in (0, 1]")
    kind_names = {k.value for k in ModalityKind}
    ids = set(registry.ids())
    for kind, module_id in program.routing_overrides.items():
        if kind not in kind_names:
            problems.append(f"routing override for unknown kind {kind!r}")
        if module_id not in ids:
            problems.append(f"routing override to unknown module {module_id!r}")
    return problems


@dataclass(frozen=True)
class WeightVector:
    weights: tuple[float, ...]
    computed_at_ns: int
    context_revision: int
    program_version: int
    profile_id: ProfileId

    @property
    def inputs_version(self) -> tuple[int, int, str]:
        return (self.context_revision, self.program_version, self.profile_id.value)

    def by_module(self, registry: ModuleRegistry) -> dict[str, float]:
        return dict(zip(registry.ids(), self.weights))


@dataclass(frozen=True)
class RoutingTable:
    routes: Mapping[str, tuple[tuple[str, float], ...]]
    forced: frozenset[str]
    program_version: int

    def targets_for(self, kind: ModalityKind) -> tuple[str, ...]:
        return tuple(module_id for module_id, _ in self.routes[kind.value])


ScoreFunction = Callable[[Mapping[str, float], ExternalProgram, tuple[float, ...], ModuleRegistry], list[float]]


def default_score(
    features: Mapping[str, float],
    program: ExternalProgram,
    profile_deltas: tuple[float, ...],
    registry: ModuleRegistry,
) -> list[float]:
    """Base weight plus profile bias plus declared-kind feature mass."""
    kind_mass: dict[str, float] = {}
    for key, value in features.items():
        suffix = key.rsplit(".", 1)[-1]
        kind_mass[suffix] = kind_mass.get(suffix, 0.0) + value
    scores = []
    for i, module in enumerate(registry):
        g = program.base_log_weights[i] + profile_deltas[i]
        for kind in module.kinds:
            g += kind_mass.get(kind.value, 0.0)
        scores.append(g)
    return scores


def softmax(scores: Sequence[float], temperature: float) -> list[float]:
    """Numerically stable temperature softmax onto the simplex."""
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    if not scores:
        raise ConfigurationError("softmax needs at least one score")
    peak = max(scores)
    exps = [math.exp((s - peak) / temperature) for s in scores]
    total = math.fsum(exps)
    return [e / total for e in exps]


class AdminIdentity:
    """Opaque capability; holding the kernel's instance is what authorizes."""

    __slots__ = ()


class AuditLog:
    """Append-only administration record, shared by dps and control."""

    def __init__(self, clock):
        self._clock = clock
        self._records: list[dict] = []

    def append(self, record: dict) -> dict:
        stamped = {"seq": len(self._records), "at_ns": self._clock.now_ns(), **record}
        self._records.append(stamped)
        return stamped

    def records(self) -> tuple[dict, ...]:
        return tuple(self._records)


class WeightingSystem:
    """Holds the current program and profile; computes weights and routes."""

    def __init__(
        self,
        registry: ModuleRegistry,
        initial_program: ExternalProgram,
        admin_identity: AdminIdentity,
        clock,
        audit: AuditLog,
        profiles: Optional[dict[ProfileId, OperationalProfile]] = None,
        score_fn: ScoreFunction = default_score,
        prune_threshold: float = defaults.PRUNE_THRESHOLD,
    ):
        problems = validate_program(initial_program, registry)
        if problems:
            raise ValidationError(problems)
        self.registry = registry
        self._program = initial_program
        self._admin = admin_identity
        self._clock = clock
        self._audit = audit
        self._profiles = profiles if profiles is not None else neutral_profiles(len(registry))
        for profile in self._profiles.values():
            p = profile.validate(len(registry))
            if p:
                raise ValidationError(p)
        missing = [pid.value for pid in ProfileId if pid not in self._profiles]
        if missing:
            raise ConfigurationError(f"profiles missing: {missing}")
        self._active_profile = ProfileId.NEUTRAL
        self._score = score_fn
        self.prune_threshold = prune_threshold

    @property
    def program(self) -> ExternalProgram:
        return self._program

    @property
    def active_profile(self) -> ProfileId:
        return self._active_profile

    def interrupt_threshold(self) -> float:
        return self._program.interrupt_threshold

    def compute_weights(self, features: Mapping[str, float], context_revision: int) -> WeightVector:
        deltas = self._profiles[self._active_profile].deltas
        scores = self._score(features, self._program, deltas, self.registry)
        if len(scores) != len(self.registry):
            raise ValidationError("score function returned the wrong arity")
        if any(not math.isfinite(s) for s in scores):
            raise ValidationError("score function produced a non-finite score")
        weights = softmax(scores, self._program.temperature)
        return WeightVector(
            weights=tuple(weights),
            computed_at_ns=self._clock.now_ns(),
            context_revision=context_revision,
            program_version=self._program.version,
            profile_id=self._active_profile,
        )

    def derive_routing(self, weight_vector: WeightVector) -> RoutingTable:
        """Per-kind target shares from the weights and any forced overrides."""
        ids = self.registry.ids()
        weights = weight_vector.weights
        routes: dict[str, tuple[tuple[str, float], ...]] = {}
        forced = set()
        for kind in ModalityKind:
            override = self._program.routing_overrides.get(kind.value)
            if override is not None:
                routes[kind.value] = ((override, 1.0),)
                forced.add(kind.value)
                continue
            kept = [(ids[i], w) for i, w in enumerate(weights) if w >= self.prune_threshold]
            if not kept:
                best = max(range(len(weights)), key=lambda i: (weights[i], -i))
                kept = [(ids[best], 1.0)]
            total = math.fsum(w for _, w in kept)
            routes[kind.value] = tuple((m, w / total) for m, w in kept)
        return RoutingTable(routes=routes, forced=frozenset(forced), program_version=self._program.version)

    def apply_external_program(
        self, new_program: ExternalProgram, identity: AdminIdentity, role: str = "admin"
    ) -> int:
        """Swap the administered program. Capability plus version gate."""
        if identity is not self._admin:
            self._audit.append(
                {"kind": "administration", "role": role, "outcome": "unauthorized",
                 "from_version": self._program.version, "to_version": new_program.version}
            )
            raise AuthorizationError("program administration requires the admin identity")
        expected = self._program.version + 1
        if new_program.version != expected:
            self._audit.append(
                {"kind": "administration", "role": role, "outcome": "version-conflict",
                 "from_version": self._program.version, "to_version": new_program.version}
            )
            raise VersionConflictError(expected, new_program.version)
        problems = validate_program(new_program, self.registry)
        if problems:
            self._audit.append(
                {"kind": "administration", "role": role, "outcome": "invalid",
                 "from_version": self._program.version, "to_version": new_program.version}
            )
            raise ValidationError(problems)
        self._program = new_program
        self._audit.append(
            {"kind": "administration", "role": role, "outcome": "accepted",
             "from_version": new_program.version - 1, "to_version": new_program.version}
        )
        log.info("program administered: v%d (%s)", new_program.version, new_program.primary_goal)
        return new_program.version

    def select_profile(self, profile_id: ProfileId, caller: str) -> ProfileId:
        """Executive-only internal adaptation; no administration involved."""
        if caller != "executive":
            raise AuthorizationError(f"profile selection denied for caller {caller!r}")
        if profile_id not in self._profiles:
            raise ConfigurationError(f"unknown profile {profile_id}")
        self._active_profile = profile_id
        log.info("profile selected: %s", profile_id.value)
        return profile_id

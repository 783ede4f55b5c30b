"""Program-level soft-error injection.

Each execution of an active non-crucial region draws one Bernoulli event
with probability ``error_rate * time_fraction``. A triggered execution
gets exactly one of its live data-flow values (chosen uniformly) replaced
by a random value of the 32-bit float type. Addresses, loop counters and
branch conditions are never targets.

Randomness is counter-based: every (master_seed, trial_index, region)
triple owns an independent Philox stream, so trials can run in any order
and a region's faults are identical whether it is injected alone or as
part of a larger configuration.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import (
    Configuration,
    CrossLayerError,
    FaultSpec,
    RegionDescriptor,
    RegionTable,
    ValueModel,
)
from .resilience import Action, StoreAudit

FLOAT32_MAX = float(np.finfo(np.float32).max)

# names the fault model must never touch
PROTECTED_TARGETS = frozenset({"k", "h", "w", "i", "j", "n", "s", "address", "branch", "loop_counter"})


class PlanError(CrossLayerError):
    pass


def trial_rng(master_seed: int, trial_index: int, stream: str | int = 0) -> np.random.Generator:
    """Independent Philox stream for one (seed, trial, stream) triple."""
    if isinstance(stream, str):
        stream = zlib.crc32(stream.encode("utf-8"))
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial_index, stream))
    return np.random.Generator(np.random.Philox(ss))


def injection_probability(region: RegionDescriptor, fault_spec: FaultSpec) -> float:
    return fault_spec.error_rate * region.time_fraction


def should_inject(region: RegionDescriptor, fault_spec: FaultSpec, rng: np.random.Generator) -> bool:
    """One Bernoulli draw for one execution of ``region``."""
    return bool(rng.random() < injection_probability(region, fault_spec))


def injection_mask(p: float, shape, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`should_inject`: one independent draw per element."""
    return rng.random(shape) < p


def perturb(value: float, value_model: ValueModel, rng: np.random.Generator) -> np.float32:
    """Replacement for a float32 data-flow value. The old value is discarded."""
    return perturb_array(1, value_model, rng)[0]


def perturb_array(n: int, value_model: ValueModel, rng: np.random.Generator) -> np.ndarray:
    if value_model is ValueModel.RANDOM_BIT_PATTERN:
        return rng.integers(0, 2**32, size=n, dtype=np.uint32).view(np.float32)
    if value_model is ValueModel.UNIFORM_IN_RANGE:
        return rng.uniform(-FLOAT32_MAX, FLOAT32_MAX, size=n).astype(np.float32)
    raise ValueError(f"unknown value model {value_model!r}")


@dataclass(frozen=True)
class Injections:
    """Faults scheduled for one region over a batch of samples.

    ``sample`` indexes the batch (the outer iteration), ``execution`` the
    region execution within that sample, ``step`` the live target inside
    the execution (e.g. which partial sum of an unrolled accumulation).
    """

    region: str
    sample: np.ndarray
    execution: np.ndarray
    step: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return len(self.sample)


class FaultInjector:
    """Random fault hook for one trial."""

    def __init__(self, fault_spec: FaultSpec, active_regions: Iterable[str], trial_index: int = 0):
        self.fault_spec = fault_spec
        self.active = frozenset(active_regions)
        self.trial_index = trial_index

    def draw(self, region: RegionDescriptor, n_samples: int, n_exec: int, n_targets: int) -> Optional[Injections]:
        if region.id not in self.active:
            return None
        p = injection_probability(region, self.fault_spec)
        if p <= 0.0:
            return None
        rng = trial_rng(self.fault_spec.master_seed, self.trial_index, region.id)
        sample, execution = np.nonzero(injection_mask(p, (n_samples, n_exec), rng))
        step = rng.integers(0, n_targets, size=sample.size)
        value = perturb_array(sample.size, self.fault_spec.value_model, rng)
        return Injections(region.id, sample, execution, step, value)


class ScriptedInjector:
    """Deterministic hook placing given values at given positions.

    ``faults`` is a sequence of ``(region, sample, execution, step, value)``.
    """

    def __init__(self, faults: Sequence[tuple[str, int, int, int, float]]):
        self.faults = list(faults)

    @property
    def active(self) -> frozenset[str]:
        return frozenset(f[0] for f in self.faults)

    def draw(self, region: RegionDescriptor, n_samples: int, n_exec: int, n_targets: int) -> Optional[Injections]:
        mine = [f for f in self.faults if f[0] == region.id]
        if not mine:
            return None
        _, s, e, t, v = zip(*mine)
        s, e, t = (np.asarray(a, dtype=np.int64) for a in (s, e, t))
        if s.max() >= n_samples or e.max() >= n_exec or t.max() >= n_targets:
            raise PlanError(f"scripted fault outside region {region.id} shape")
        return Injections(region.id, s, e, t, np.asarray(v, dtype=np.float32))


@dataclass(frozen=True)
class InjectionEvent:
    region: str
    sample: int
    iteration: int
    step: int
    target: str
    old: float
    new: float
    action: Action

    @property
    def committed(self) -> bool:
        return self.action is not Action.DROPPED


@dataclass
class EventLog:
    """Columnar log of injection events; one batch per region per run."""

    batches: list[dict] = field(default_factory=list)
    stores: StoreAudit = field(default_factory=StoreAudit)

    def add(self, inj: Injections, target: str, old: np.ndarray, actions: np.ndarray) -> None:
        """``actions`` holds :class:`Action` codes via :data:`ACTION_CODES`."""
        if len(inj):
            self.batches.append(
                dict(region=inj.region, target=target, sample=inj.sample, execution=inj.execution,
                     step=inj.step, old=np.asarray(old, np.float32), new=inj.value,
                     action=np.asarray(actions, np.int8))
            )

    def extend(self, other: "EventLog") -> None:
        self.batches.extend(other.batches)
        self.stores.requested += other.stores.requested
        self.stores.deviations += other.stores.deviations

    def __len__(self) -> int:
        return sum(len(b["sample"]) for b in self.batches)

    def __iter__(self) -> Iterator[InjectionEvent]:
        for b in self.batches:
            for k in range(len(b["sample"])):
                yield InjectionEvent(
                    b["region"], int(b["sample"][k]), int(b["execution"][k]), int(b["step"][k]),
                    b["target"], float(b["old"][k]), float(b["new"][k]), ACTIONS[int(b["action"][k])],
                )

    def regions(self) -> set[str]:
        return {b["region"] for b in self.batches if len(b["sample"])}

    def targets(self) -> set[str]:
        return {b["target"] for b in self.batches if len(b["sample"])}

    def summary(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for b in self.batches:
            counts = out.setdefault(b["region"], {a.value: 0 for a in ACTIONS})
            codes, n = np.unique(b["action"], return_counts=True)
            for c, m in zip(codes, n):
                counts[ACTIONS[int(c)].value] += int(m)
        return {k: out[k] for k in sorted(out)}

    def to_lines(self, trial: Optional[int] = None) -> Iterator[str]:
        """Audit-log records: ``region iteration action`` plus detail fields."""
        prefix = "" if trial is None else f"trial={trial} "
        for ev in self:
            yield (f"{prefix}region={ev.region} sample={ev.sample} iteration={ev.iteration} "
                   f"step={ev.step} target={ev.target} old={ev.old!r} new={ev.new!r} "
                   f"action={ev.action.value}")


ACTIONS = (Action.PASSED, Action.CLAMPED, Action.DROPPED)
ACTION_CODES = {a: i for i, a in enumerate(ACTIONS)}


def scope_violations(log: EventLog, config: Configuration, regions: RegionTable,
                     injectable_targets: Iterable[str]) -> list[str]:
    """Describe every event outside the fault model (empty list when clean)."""
    allowed = frozenset(injectable_targets)
    problems = []
    for b in log.batches:
        if not len(b["sample"]):
            continue
        rid, target = b["region"], b["target"]
        if rid not in regions or not regions[rid].is_candidate:
            problems.append(f"event in crucial or unknown region {rid}")
        elif rid not in config.non_crucial:
            problems.append(f"event in region {rid} outside configuration")
        if target in PROTECTED_TARGETS or target not in allowed:
            problems.append(f"event targets protected value {target} in {rid}")
    return problems


@dataclass(frozen=True)
class InjectionPlan:
    fault_spec: FaultSpec
    active_regions: frozenset[str]
    trial_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "active_regions", frozenset(self.active_regions))

    def injector(self) -> FaultInjector:
        return FaultInjector(self.fault_spec, self.active_regions, self.trial_index)


@dataclass(frozen=True)
class TrialResult:
    accuracy: float
    correct: int
    predictions: np.ndarray
    events: EventLog


def run_trial(workload, dataset, config: Configuration, plan: InjectionPlan) -> TrialResult:
    """Classify every sample once under ``plan`` and score the result."""
    if not plan.active_regions <= config.non_crucial:
        raise PlanError(f"active regions {sorted(plan.active_regions)} not within {config.label()}")
    predictions, events = workload.run_batch(dataset, config, plan.injector())
    correct = int(np.count_nonzero(predictions == np.asarray(dataset.labels)))
    return TrialResult(correct / len(dataset), correct, predictions, events)

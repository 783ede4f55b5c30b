"""Shared domain types and the region/configuration algebra.

A workload is partitioned into named regions. Each region is either
``CRUCIAL`` (always executed under redundant hardware execution) or a
``NON_CRUCIAL_CANDIDATE`` that a :class:`Configuration` may move to the
lightweight software/hardware scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

TIME_FRACTION_TOLERANCE = 1e-9


class CrossLayerError(Exception):
    """Base class for all errors raised by this package."""


class DuplicateRegionId(CrossLayerError):
    pass


class TimeFractionSumMismatch(CrossLayerError):
    pass


class InvalidBound(CrossLayerError):
    pass


class InvalidRegion(CrossLayerError):
    pass


class RegionNotInConfiguration(CrossLayerError):
    pass


class RegionClass(Enum):
    CRUCIAL = "crucial"
    NON_CRUCIAL_CANDIDATE = "candidate"


class BoundMode(Enum):
    CLAMP = "clamp"
    DROP = "drop"


class ValueModel(Enum):
    RANDOM_BIT_PATTERN = "random_bit_pattern"
    UNIFORM_IN_RANGE = "uniform_in_range"


@dataclass(frozen=True)
class BoundSpec:
    lower: float
    upper: float
    mode: BoundMode = BoundMode.CLAMP

    def validate(self) -> "BoundSpec":
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidBound(f"bounds must be finite, got ({self.lower}, {self.upper})")
        if not self.lower < self.upper:
            raise InvalidBound(f"lower bound {self.lower} must be < upper bound {self.upper}")
        return self


@dataclass(frozen=True)
class RegionDescriptor:
    """One lexical region of a workload.

    ``time_fraction`` is the share of one baseline inference spent in the
    region. ``executions`` is how many times the region body runs per
    inference (each run is one HaRE off/on window when non-crucial).
    """

    id: str
    workload: str
    region_class: RegionClass
    time_fraction: float
    bound_spec: Optional[BoundSpec] = None
    store_count_fraction: float = 0.0
    check_count: int = 0
    executions: int = 1

    @property
    def is_candidate(self) -> bool:
        return self.region_class is RegionClass.NON_CRUCIAL_CANDIDATE


@dataclass(frozen=True)
class Configuration:
    """The set of candidate regions currently executed as non-crucial."""

    workload: str
    non_crucial: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "non_crucial", frozenset(self.non_crucial))

    def label(self) -> str:
        return " + ".join(sorted(self.non_crucial)) if self.non_crucial else "(none)"


@dataclass(frozen=True)
class FaultSpec:
    error_rate: float
    master_seed: int = 0
    value_model: ValueModel = ValueModel.RANDOM_BIT_PATTERN

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate must lie in [0, 1], got {self.error_rate}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class AccuracyReport:
    configuration: Configuration
    trials: int
    mean_accuracy: float
    fault_free_accuracy: float
    stderr: float
    per_region_loss: Mapping[str, float] = field(default_factory=dict)
    per_region_stderr: Mapping[str, float] = field(default_factory=dict)
    events: int = 0

    @property
    def accuracy_loss(self) -> float:
        return self.fault_free_accuracy - self.mean_accuracy

    @property
    def suspicious_gain(self) -> bool:
        """True when accuracy improved under faults by more than noise allows."""
        return self.accuracy_loss < -3.0 * self.stderr


class RegionTable(Mapping[str, RegionDescriptor]):
    """Validated, immutable mapping of region id to descriptor for one workload."""

    def __init__(self, regions: Iterable[RegionDescriptor]):
        self._regions = {r.id: r for r in regions}
        self.workload = next(iter(self._regions.values())).workload

    def __getitem__(self, key: str) -> RegionDescriptor:
        return self._regions[key]

    def __iter__(self):
        return iter(self._regions)

    def __len__(self) -> int:
        return len(self._regions)

    def __repr__(self) -> str:
        return f"RegionTable({self.workload!r}, {list(self._regions)})"

    @property
    def candidates(self) -> list[RegionDescriptor]:
        return [r for r in self._regions.values() if r.is_candidate]

    def with_overrides(self, **fields: Mapping[str, object]) -> "RegionTable":
        """Return a revalidated table with per-region field overrides.

        ``fields`` maps a field name to ``{region_id: value}``.
        """
        for name, values in fields.items():
            unknown = set(values) - set(self._regions)
            if unknown:
                raise InvalidRegion(f"override of {name} names unknown regions {sorted(unknown)}")
        updated = []
        for region in self._regions.values():
            changes = {name: values[region.id] for name, values in fields.items() if region.id in values}
            updated.append(replace(region, **changes) if changes else region)
        return validate_region_set(updated)


def validate_region_set(regions: Iterable[RegionDescriptor]) -> RegionTable:
    regions = list(regions)
    if not regions:
        raise InvalidRegion("region set is empty")
    seen: set[str] = set()
    for r in regions:
        if r.id in seen:
            raise DuplicateRegionId(r.id)
        seen.add(r.id)
    workloads = {r.workload for r in regions}
    if len(workloads) != 1:
        raise InvalidRegion(f"regions span several workloads: {sorted(workloads)}")
    for r in regions:
        if not 0.0 <= r.time_fraction <= 1.0:
            raise TimeFractionSumMismatch(f"{r.id}: time_fraction {r.time_fraction} outside [0, 1]")
        if not 0.0 <= r.store_count_fraction <= 1.0:
            raise InvalidRegion(f"{r.id}: store_count_fraction outside [0, 1]")
        if r.check_count < 0 or r.executions < 0:
            raise InvalidRegion(f"{r.id}: negative count")
        if r.bound_spec is not None:
            r.bound_spec.validate()
    # fsum keeps acceptance independent of list order
    total = math.fsum(r.time_fraction for r in regions)
    if abs(total - 1.0) > TIME_FRACTION_TOLERANCE:
        raise TimeFractionSumMismatch(f"time fractions sum to {total!r}, expected 1")
    return RegionTable(sorted(regions, key=lambda r: r.id))


def all_candidates(regions: RegionTable) -> Configuration:
    return Configuration(regions.workload, frozenset(r.id for r in regions.candidates))


def demote(config: Configuration, region: str) -> Configuration:
    """Move ``region`` back to crucial execution."""
    if region not in config.non_crucial:
        raise RegionNotInConfiguration(f"{region!r} is not in {config.label()}")
    return Configuration(config.workload, config.non_crucial - {region})


def check_configuration(config: Configuration, regions: RegionTable) -> None:
    if config.workload != regions.workload:
        raise InvalidRegion(f"configuration is for {config.workload}, regions for {regions.workload}")
    for rid in config.non_crucial:
        if rid not in regions:
            raise InvalidRegion(f"unknown region {rid!r}")
        if not regions[rid].is_candidate:
            raise InvalidRegion(f"region {rid!r} is crucial and cannot be non-crucial")


def noncrucial_time_fraction(config: Configuration, regions: RegionTable) -> float:
    return math.fsum(regions[r].time_fraction for r in config.non_crucial)

"""Lightweight protection primitives for non-crucial regions.

Bound checking guards values committed to global data, store addresses
are computed redundantly (modeled as an audited guarantee), and HaRE
on/off transitions are counted for the cost model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Optional

import numpy as np

from .core import BoundMode, BoundSpec, Configuration, RegionTable


class Action(Enum):
    PASSED = "passed"
    CLAMPED = "clamped"
    DROPPED = "dropped"


class SchemeKind(Enum):
    HARE = "HaRE"
    SHR = "SHR"


@dataclass(frozen=True)
class ProtectionScheme:
    kind: SchemeKind
    switch_events: int = 0


@dataclass(frozen=True)
class CheckOutcome:
    committed_value: Optional[float]
    action: Action


def bound_check(value: float, spec: BoundSpec) -> CheckOutcome:
    """Scalar bound checker. Non-finite values are always out of range.

    Under clamp, NaN has no side to clamp to and commits the lower bound.
    """
    v = float(value)
    if math.isfinite(v) and spec.lower <= v <= spec.upper:
        return CheckOutcome(v, Action.PASSED)
    if spec.mode is BoundMode.DROP:
        return CheckOutcome(None, Action.DROPPED)
    if v > spec.upper:
        return CheckOutcome(spec.upper, Action.CLAMPED)
    return CheckOutcome(spec.lower, Action.CLAMPED)


def clamp_array(values: np.ndarray, lower, upper) -> np.ndarray:
    """Vectorized clamp with the same NaN rule as :func:`bound_check`."""
    out = np.where(np.isnan(values), lower, values)
    return np.clip(out, lower, upper).astype(values.dtype, copy=False)


def in_bounds(values: np.ndarray, lower, upper) -> np.ndarray:
    """Mask of values a drop-mode checker would commit."""
    with np.errstate(invalid="ignore"):
        return np.isfinite(values) & (values >= lower) & (values <= upper)


def scheme_for(region_id: str, config: Configuration, regions: RegionTable) -> ProtectionScheme:
    if region_id in config.non_crucial:
        return ProtectionScheme(SchemeKind.SHR, 2 * regions[region_id].executions)
    return ProtectionScheme(SchemeKind.HARE, 0)


def region_transition_count(config: Configuration, regions: RegionTable) -> int:
    """HaRE on/off toggles per inference: one off and one on per non-crucial region execution."""
    return sum(2 * regions[r].executions for r in config.non_crucial)


def bound_check_count(config: Configuration, regions: RegionTable) -> int:
    return sum(regions[r].check_count * regions[r].executions for r in config.non_crucial)


@dataclass
class StoreAudit:
    requested: int = 0
    deviations: int = 0
    records: list[tuple[Hashable, Hashable]] = field(default_factory=list)
    keep_records: bool = False


class ProtectedMemory:
    """A flat address space whose stores go through redundant address checks.

    The address is computed twice; the write proceeds only when both agree
    (re-executed otherwise). Faults are never applied to addresses, so the
    audit must show every landed location equal to the requested one.
    """

    def __init__(self, keep_records: bool = False):
        self._cells: dict[Hashable, float] = {}
        self.audit = StoreAudit(keep_records=keep_records)

    @staticmethod
    def _resolve(address: Hashable) -> Hashable:
        return address

    def protected_store(self, address: Hashable, value: float) -> None:
        first = self._resolve(address)
        second = self._resolve(address)
        while first != second:  # pragma: no cover - address faults are out of the fault model
            first, second = self._resolve(address), self._resolve(address)
        self._cells[first] = value
        self.audit.requested += 1
        if first != address:
            self.audit.deviations += 1
        if self.audit.keep_records:
            self.audit.records.append((address, first))

    def load(self, address: Hashable) -> float:
        return self._cells[address]

    def __len__(self) -> int:
        return len(self._cells)


def protected_store_many(target: np.ndarray, index, values: np.ndarray, audit: StoreAudit) -> None:
    """Vectorized protected store into ``target[index]`` with address audit."""
    first = np.ravel_multi_index(index, target.shape)
    second = np.ravel_multi_index(index, target.shape)
    audit.deviations += int(np.count_nonzero(first != second))
    target.flat[first] = values
    audit.requested += int(first.size)

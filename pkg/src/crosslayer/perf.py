"""Analytic completion-time model for BASELINE, HaRE and cross-layer configurations.

All times are normalized to the unprotected baseline (1.0). A crucial
region costs ``f * h``; a non-crucial one costs ``f`` plus SHR store
overhead, and every bound check and HaRE on/off toggle adds a fixed cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .core import Configuration, CrossLayerError, RegionTable
from .resilience import bound_check_count, region_transition_count

HARE_OVERHEAD = 1.63
DEFAULT_STORE_FACTOR = 0.05
# per invocation, in baseline-inference units; keeps CNN-MNIST SHR overhead under 2%
DEFAULT_CHECK_COST = 1e-6
DEFAULT_SWITCH_PENALTY = 1e-6

BREAKDOWN_KEYS = ("crucial_compute", "noncrucial_compute", "shr_store", "bound_checks", "switches")


class InvalidTarget(CrossLayerError):
    pass


class InvalidCostModel(CrossLayerError):
    pass


@dataclass(frozen=True)
class CostModel:
    hare_multiplier: float = HARE_OVERHEAD
    shr_store_factor: float = DEFAULT_STORE_FACTOR
    shr_check_cost: float = DEFAULT_CHECK_COST
    switch_penalty: float = DEFAULT_SWITCH_PENALTY

    def __post_init__(self) -> None:
        for name in ("hare_multiplier", "shr_store_factor", "shr_check_cost", "switch_penalty"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidCostModel(f"{name} must be a finite non-negative number, got {v}")
        if self.hare_multiplier < 1.0:
            raise InvalidCostModel(f"hare_multiplier must be >= 1, got {self.hare_multiplier}")

    @classmethod
    def identity(cls) -> "CostModel":
        return cls(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class OverheadReport:
    normalized_time: float
    breakdown: dict[str, float] = field(default_factory=dict)


def price(config: Configuration, regions: RegionTable, cm: CostModel,
          toggles: Optional[int] = None) -> OverheadReport:
    """Normalized completion time of ``config``.

    ``toggles`` defaults to :func:`region_transition_count`.
    """
    if toggles is None:
        toggles = region_transition_count(config, regions)
    crucial = [r for r in regions.values() if r.id not in config.non_crucial]
    shr = [regions[r] for r in sorted(config.non_crucial)]
    parts = {
        "crucial_compute": math.fsum(r.time_fraction * cm.hare_multiplier for r in crucial),
        "noncrucial_compute": math.fsum(r.time_fraction for r in shr),
        "shr_store": math.fsum(r.time_fraction * cm.shr_store_factor * r.store_count_fraction for r in shr),
        "bound_checks": cm.shr_check_cost * bound_check_count(config, regions),
        "switches": cm.switch_penalty * toggles,
    }
    return OverheadReport(math.fsum(parts.values()), parts)


def calibrate(target_hare_overhead: float, regions: Optional[RegionTable] = None) -> CostModel:
    """Cost model whose all-crucial price equals ``target_hare_overhead``.

    Time fractions sum to one, so HaRE everywhere costs exactly ``h``;
    the SHR factors keep their defaults.
    """
    if not math.isfinite(target_hare_overhead) or target_hare_overhead < 1.0:
        raise InvalidTarget(f"HaRE overhead target must be >= 1, got {target_hare_overhead}")
    return CostModel(hare_multiplier=target_hare_overhead)


def improvement_over_hare(config: Configuration, regions: RegionTable, cm: CostModel,
                          toggles: Optional[int] = None) -> float:
    """Percent completion-time reduction relative to HaRE everywhere."""
    hare = price(Configuration(regions.workload), regions, cm).normalized_time
    cl = price(config, regions, cm, toggles).normalized_time
    return (hare - cl) / hare * 100.0

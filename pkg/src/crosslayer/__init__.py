"""Cross-layer soft-error resilience for ML inference workloads.

Region-annotated CNN/MLP/KNN kernels run under program-level fault
injection; a greedy selector picks which regions may run without
redundant execution under an accuracy-loss threshold, and an analytic
model prices the resulting protection configuration.
"""

from .core import (
    AccuracyReport,
    BoundMode,
    BoundSpec,
    Configuration,
    FaultSpec,
    RegionClass,
    RegionDescriptor,
    RegionTable,
    ValueModel,
    all_candidates,
    demote,
    validate_region_set,
)

__version__ = "0.1.0"

"""Monte Carlo accuracy estimation and greedy configuration selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    AccuracyReport,
    Configuration,
    FaultSpec,
    RegionTable,
    ValueModel,
    all_candidates,
    demote,
    noncrucial_time_fraction,
)
from .faults import InjectionPlan, run_trial

log = logging.getLogger(__name__)

Evaluator = Callable[[Configuration], AccuracyReport]


@dataclass(frozen=True)
class SelectionConstraints:
    error_rate: float
    accuracy_loss_threshold: float
    trials: int = 1000
    master_seed: int = 0
    value_model: ValueModel = ValueModel.RANDOM_BIT_PATTERN

    def __post_init__(self) -> None:
        if not 0.0 < self.accuracy_loss_threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {self.accuracy_loss_threshold}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def fault_spec(self) -> FaultSpec:
        return FaultSpec(self.error_rate, self.master_seed, self.value_model)


@dataclass(frozen=True)
class SelectionResult:
    final_config: Configuration
    demotion_sequence: list[tuple[str, float]]
    final_report: AccuracyReport
    #: one report per loop iteration, first = all candidates
    history: list[AccuracyReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class _Tally:
    correct: np.ndarray  # per-trial correct counts
    n: int

    @property
    def mean(self) -> float:
        return math.fsum(self.correct.tolist()) / (self.n * len(self.correct))

    @property
    def stderr(self) -> float:
        t = len(self.correct)
        if t < 2:
            return 0.0
        return float(np.std(self.correct / self.n, ddof=1)) / math.sqrt(t)


class MonteCarlo:
    """Trial runner with memoized tallies for one (workload, dataset, fault spec).

    Trial ``t`` of every plan shares the same per-region random streams, so
    single-region and full-configuration estimates use common random
    numbers and repeated evaluations of the same plan cost nothing.
    """

    def __init__(self, workload, dataset, fault_spec: FaultSpec, trials: int,
                 observer: Optional[Callable[[frozenset, int, object], None]] = None):
        if trials < 1:
            raise ValueError("trials must be >= 1")
        self.workload = workload
        self.dataset = dataset
        self.fault_spec = fault_spec
        self.trials = trials
        self._tallies: dict[frozenset[str], _Tally] = {}
        self.events: dict[frozenset[str], int] = {}
        self._fault_free: Optional[float] = None
        #: called as ``observer(active_regions, trial_index, TrialResult)``
        self.observer = observer

    @property
    def fault_free_accuracy(self) -> float:
        if self._fault_free is None:
            pred = self.workload.predict(self.dataset)
            self._fault_free = int(np.count_nonzero(pred == np.asarray(self.dataset.labels))) / len(self.dataset)
        return self._fault_free

    def tally(self, config: Configuration, active: frozenset[str]) -> _Tally:
        key = frozenset(active)
        if key not in self._tallies:
            n = len(self.dataset)
            if not key or self.fault_spec.error_rate == 0.0:
                ff = round(self.fault_free_accuracy * n)
                self._tallies[key] = _Tally(np.full(self.trials, ff, np.int64), n)
                self.events[key] = 0
            else:
                correct = np.empty(self.trials, np.int64)
                events = 0
                for t in range(self.trials):
                    res = run_trial(self.workload, self.dataset, config, InjectionPlan(self.fault_spec, key, t))
                    correct[t] = res.correct
                    events += len(res.events)
                    if self.observer is not None:
                        self.observer(key, t, res)
                self._tallies[key] = _Tally(correct, n)
                self.events[key] = events
        return self._tallies[key]

    def evaluate(self, config: Configuration, per_region: bool = True) -> AccuracyReport:
        ff = self.fault_free_accuracy
        whole = self.tally(config, config.non_crucial)
        losses, errs = {}, {}
        if per_region:
            for rid in sorted(config.non_crucial):
                single = self.tally(config, frozenset({rid}))
                losses[rid] = ff - single.mean
                errs[rid] = single.stderr
        return AccuracyReport(
            configuration=config, trials=self.trials, mean_accuracy=whole.mean, fault_free_accuracy=ff,
            stderr=whole.stderr, per_region_loss=losses, per_region_stderr=errs,
            events=self.events[frozenset(config.non_crucial)],
        )


def evaluate_configuration(workload, dataset, config: Configuration, fault_spec: FaultSpec, trials: int,
                           per_region: bool = True) -> AccuracyReport:
    """Mean accuracy of ``config`` over ``trials`` independent fault trials.

    ``per_region_loss`` holds, for every non-crucial region, the loss when
    only that region is exposed to faults.
    """
    return MonteCarlo(workload, dataset, fault_spec, trials).evaluate(config, per_region)


def pick_demotion(report: AccuracyReport, regions: RegionTable) -> str:
    """Region with the largest loss; ties go to the shortest, then the lowest id."""
    return min(report.per_region_loss,
               key=lambda r: (-report.per_region_loss[r], regions[r].time_fraction, r))


def greedy_select(regions: RegionTable, evaluate: Evaluator, threshold: float) -> SelectionResult:
    """Demote the worst region until the configuration meets ``threshold``.

    ``evaluate`` must fill ``per_region_loss`` for every non-crucial region.
    """
    config = all_candidates(regions)
    sequence: list[tuple[str, float]] = []
    history: list[AccuracyReport] = []
    warnings: list[str] = []
    while True:
        report = evaluate(config)
        history.append(report)
        if report.accuracy_loss <= threshold or not config.non_crucial:
            return SelectionResult(config, sequence, report, history, warnings)
        worst = pick_demotion(report, regions)
        note = _close_call(report, worst)
        if note:
            log.warning(note)
            warnings.append(note)
        sequence.append((worst, report.per_region_loss[worst]))
        config = demote(config, worst)


def _close_call(report: AccuracyReport, chosen: str) -> Optional[str]:
    others = [r for r in report.per_region_loss if r != chosen]
    if not others:
        return None
    runner = max(others, key=lambda r: report.per_region_loss[r])
    gap = report.per_region_loss[chosen] - report.per_region_loss[runner]
    se = math.hypot(report.per_region_stderr.get(chosen, 0.0), report.per_region_stderr.get(runner, 0.0))
    if se > 0 and gap < se:
        return (f"demoting {chosen} over {runner}: loss gap {gap:.5f} is below one stderr ({se:.5f})")
    return None


def select_configuration(workload, dataset, constraints: SelectionConstraints,
                         runner: Optional[MonteCarlo] = None) -> SelectionResult:
    runner = runner or MonteCarlo(workload, dataset, constraints.fault_spec, constraints.trials)
    return greedy_select(workload.regions, runner.evaluate, constraints.accuracy_loss_threshold)


class ScriptedLosses:
    """Evaluator with fixed losses, for exercising the selector without trials.

    ``single`` maps region id to its isolated loss; ``combined`` gives the
    loss of a whole configuration (defaults to the sum of its members).
    """

    def __init__(self, regions: RegionTable, single: Mapping[str, float],
                 combined: Optional[Callable[[frozenset[str]], float]] = None, trials: int = 1000):
        self.regions = regions
        self.single = dict(single)
        self.combined = combined or (lambda s: math.fsum(self.single[r] for r in s))
        self.trials = trials
        self.calls: list[frozenset[str]] = []

    def __call__(self, config: Configuration) -> AccuracyReport:
        self.calls.append(config.non_crucial)
        loss = self.combined(config.non_crucial) if config.non_crucial else 0.0
        return AccuracyReport(
            configuration=config, trials=self.trials, mean_accuracy=1.0 - loss, fault_free_accuracy=1.0,
            stderr=0.0, per_region_loss={r: self.single[r] for r in sorted(config.non_crucial)},
            per_region_stderr={r: 0.0 for r in config.non_crucial},
        )


@dataclass(frozen=True)
class SweepRow:
    workload: str
    threshold: float
    error_rate: float
    regions_kept: int
    noncrucial_time_fraction: float
    accuracy_loss: float
    cl_time: float
    hare_time: float
    improvement_pct: float
    non_crucial: tuple[str, ...] = ()


SWEEP_COLUMNS = ("workload", "threshold", "error_rate", "regions_kept", "noncrucial_time_fraction",
                 "accuracy_loss", "cl_time", "hare_time", "improvement_pct")


def sweep(workload, dataset, thresholds: Sequence[float], error_rates: Sequence[float], trials: int,
          master_seed: int = 0, value_model: ValueModel = ValueModel.RANDOM_BIT_PATTERN,
          cost_model=None) -> list[SweepRow]:
    """Selection over the threshold x error-rate grid, one row per cell.

    Cells sharing an error rate share one memoized trial runner, so the
    selector walks the same demotion path and only extends it for tighter
    thresholds.
    """
    from .perf import calibrate, improvement_over_hare, price

    if not thresholds or not error_rates:
        raise ValueError("sweep needs at least one threshold and one error rate")
    regions = workload.regions
    cm = cost_model or calibrate(1.63, regions)
    hare = price(Configuration(regions.workload), regions, cm).normalized_time
    rows = []
    for e in error_rates:
        runner = MonteCarlo(workload, dataset, FaultSpec(e, master_seed, value_model), trials)
        for th in thresholds:
            res = select_configuration(workload, dataset, SelectionConstraints(e, th, trials, master_seed, value_model),
                                       runner)
            cfg = res.final_config
            cl = price(cfg, regions, cm).normalized_time
            rows.append(SweepRow(
                workload=regions.workload, threshold=th, error_rate=e, regions_kept=len(cfg.non_crucial),
                noncrucial_time_fraction=noncrucial_time_fraction(cfg, regions),
                accuracy_loss=res.final_report.accuracy_loss, cl_time=cl, hare_time=hare,
                improvement_pct=improvement_over_hare(cfg, regions, cm), non_crucial=tuple(sorted(cfg.non_crucial)),
            ))
    return rows


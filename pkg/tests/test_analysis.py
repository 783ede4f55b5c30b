import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crosslayer.analysis import (
    MonteCarlo,
    ScriptedLosses,
    SelectionConstraints,
    evaluate_configuration,
    greedy_select,
    pick_demotion,
    select_configuration,
    sweep,
)
from crosslayer.core import (
    Configuration,
    FaultSpec,
    RegionClass,
    RegionDescriptor,
    all_candidates,
    validate_region_set,
)

CAND, CRUC = RegionClass.NON_CRUCIAL_CANDIDATE, RegionClass.CRUCIAL


def table(times: dict, crucial: float = 0.1):
    scale = (1 - crucial) / sum(times.values())
    regs = [RegionDescriptor(r, "SYN", CAND, f * scale) for r, f in times.items()]
    regs.append(RegionDescriptor("Out", "SYN", CRUC, crucial))
    return validate_region_set(regs)


def hand_trace(single, combined, times, threshold):
    """Reference selector: sort the remaining regions, take the head."""
    current = set(single)
    sequence = []
    # losses are reported as fault-free minus mean accuracy
    while current and 1.0 - (1.0 - combined(frozenset(current))) > threshold:
        ranked = sorted(current, key=lambda r: (-single[r], times[r], r))
        sequence.append(ranked[0])
        current.remove(ranked[0])
    return sequence, current


def test_worst_region_is_demoted_first():
    regions = table({"A": 1, "B": 1, "C": 1})
    ev = ScriptedLosses(regions, {"A": 0.08, "B": 0.03, "C": 0.01}, lambda s: 0.11 if len(s) == 3 else 0.04)
    res = greedy_select(regions, ev, 0.10)
    assert res.demotion_sequence == [("A", 0.08)]
    assert res.final_config.non_crucial == {"B", "C"}


def test_equal_losses_demote_the_shorter_region():
    regions = table({"A": 0.4, "B": 0.2}, crucial=0.4)
    ev = ScriptedLosses(regions, {"A": 0.05, "B": 0.05})
    res = greedy_select(regions, ev, 0.06)
    assert [r for r, _ in res.demotion_sequence] == ["B"]


def test_full_ties_fall_back_to_lexicographic_id():
    regions = table({"B": 1, "A": 1})
    res = greedy_select(regions, ScriptedLosses(regions, {"A": 0.2, "B": 0.2}), 0.1)
    assert [r for r, _ in res.demotion_sequence] == ["A", "B"]
    assert res.final_config.non_crucial == frozenset()


def test_threshold_one_keeps_everything():
    regions = table({"A": 1, "B": 2})
    res = greedy_select(regions, ScriptedLosses(regions, {"A": 0.9, "B": 0.9}, lambda s: 1.0), 1.0)
    assert res.demotion_sequence == [] and res.final_config == all_candidates(regions)


def test_close_calls_are_warned_but_rule_applies(caplog):
    regions = table({"A": 1, "B": 1})

    class Noisy(ScriptedLosses):
        def __call__(self, config):
            rep = super().__call__(config)
            return type(rep)(**{**rep.__dict__, "per_region_stderr": {r: 0.01 for r in config.non_crucial}})

    with caplog.at_level(logging.WARNING, logger="crosslayer.analysis"):
        res = greedy_select(regions, Noisy(regions, {"A": 0.051, "B": 0.05}), 0.06)
    assert res.demotion_sequence[0][0] == "A"
    assert res.warnings and "stderr" in caplog.text


scenario = st.integers(1, 4).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.01, 0.02, 0.05, 0.08, 0.1]), min_size=n, max_size=n),
    st.lists(st.integers(1, 3), min_size=n, max_size=n),
    st.sampled_from([0.03, 0.05, 0.10]),
    st.sampled_from(["sum", "max", "superadditive"]),
))


def _combine(kind, single):
    if kind == "sum":
        return lambda s: math.fsum(single[r] for r in s)
    if kind == "max":
        return lambda s: max((single[r] for r in s), default=0.0)
    return lambda s: math.fsum(single[r] for r in s) * (1 + 0.2 * len(s))


@settings(max_examples=100, deadline=None)
@given(scenario)
def test_greedy_matches_hand_trace_and_exhaustive_check(sc):
    losses, times, threshold, kind = sc
    ids = [f"R{i}" for i in range(len(losses))]
    single = dict(zip(ids, losses))
    regions = table(dict(zip(ids, times)))
    comb = _combine(kind, single)
    res = greedy_select(regions, ScriptedLosses(regions, single, comb), threshold)
    tf = {r: regions[r].time_fraction for r in ids}
    seq, final = hand_trace(single, comb, tf, threshold)
    assert [r for r, _ in res.demotion_sequence] == seq
    assert res.final_config.non_crucial == final
    assert len(res.demotion_sequence) <= len(ids)
    # exhaustive table of every subset: claimed success really meets the threshold
    exhaustive = {frozenset(c): comb(frozenset(c)) for n in range(len(ids) + 1) for c in itertools.combinations(ids, n)}
    assert 1.0 - (1.0 - exhaustive[res.final_config.non_crucial]) <= threshold or not res.final_config.non_crucial
    # replaying the log reproduces every choice
    for report, (rid, loss) in zip(res.history, res.demotion_sequence):
        assert pick_demotion(report, regions) == rid and report.per_region_loss[rid] == loss


def test_zero_error_rate_has_exactly_zero_loss(cnn, test_set):
    rep = evaluate_configuration(cnn, test_set, all_candidates(cnn.regions), FaultSpec(0.0), 5)
    assert rep.accuracy_loss == 0.0 and rep.stderr == 0.0
    assert rep.per_region_loss == {"C": 0.0, "F": 0.0}


def test_report_arithmetic(knn, test_set):
    rep = evaluate_configuration(knn, test_set, all_candidates(knn.regions), FaultSpec(0.01, 4), 20)
    assert rep.accuracy_loss == rep.fault_free_accuracy - rep.mean_accuracy
    assert 0.0 <= rep.mean_accuracy <= 1.0 and rep.trials == 20 and rep.events > 0


def test_combined_loss_dominates_single_losses(cnn, test_set):
    rep = evaluate_configuration(cnn, test_set, all_candidates(cnn.regions), FaultSpec(0.02, 8), 60)
    worst = max(rep.per_region_loss, key=rep.per_region_loss.get)
    se = math.hypot(rep.stderr, rep.per_region_stderr[worst])
    assert rep.accuracy_loss >= rep.per_region_loss[worst] - 3 * se


def test_memoized_runner_reuses_tallies(knn, test_set):
    mc = MonteCarlo(knn, test_set, FaultSpec(0.01, 1), 5)
    cfg = all_candidates(knn.regions)
    first = mc.evaluate(cfg)
    assert mc.evaluate(cfg) == first
    assert first.per_region_loss["Distance"] == first.accuracy_loss


def test_selection_on_real_workload_reaches_empty_config(mlp, test_set):
    res = select_configuration(mlp, test_set, SelectionConstraints(0.5, 0.001, trials=5, master_seed=2))
    assert res.final_config.non_crucial == frozenset()
    assert [r for r, _ in res.demotion_sequence] in (["I1", "I2"], ["I2", "I1"])
    assert res.final_report.accuracy_loss == 0.0


def test_constraint_validation():
    with pytest.raises(ValueError):
        SelectionConstraints(0.001, 0.0)
    with pytest.raises(ValueError):
        SelectionConstraints(0.001, 0.1, trials=0)


def test_sweep_grid_is_full_cross_product(knn, test_set):
    rows = sweep(knn, test_set, [0.10, 0.05, 0.03], [0.0001, 0.001, 0.005, 0.01, 0.1], trials=4)
    assert len(rows) == 15
    assert {(r.threshold, r.error_rate) for r in rows} == set(itertools.product([0.10, 0.05, 0.03],
                                                                               [0.0001, 0.001, 0.005, 0.01, 0.1]))
    assert all(r.improvement_pct >= 0 for r in rows)


def test_sweep_kept_regions_are_monotone(cnn, test_set):
    thresholds, rates = [0.10, 0.05, 0.03, 0.01], [0.001, 0.02, 0.1]
    rows = {(r.threshold, r.error_rate): r for r in sweep(cnn, test_set, thresholds, rates, trials=30, master_seed=5)}
    for e in rates:
        kept = [rows[t, e].regions_kept for t in thresholds]
        assert kept == sorted(kept, reverse=True)
    for t in thresholds:
        kept = [rows[t, e].regions_kept for e in rates]
        assert kept == sorted(kept, reverse=True)

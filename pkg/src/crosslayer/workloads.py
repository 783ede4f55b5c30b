"""Region-annotated inference kernels: CNN-MNIST, MLP-MNIST and KNN-MNIST.

All arithmetic is float32 and strictly sequential along every
accumulation (one partial sum per unrolled step), vectorized only across
independent cells, neurons or neighbours. That makes the region-structured
code bitwise equal to a plain scalar loop and lets a faulted execution be
replayed exactly from the step where its partial sum was replaced.

Each non-crucial execution is one HaRE-off window:

* CNN ``C``: one output cell of one kernel, 25 unrolled taps.
* CNN ``F`` / MLP ``I1``, ``I2``: one neuron over one chunk of inputs.
* KNN ``Distance``: the full distance to one training sample.

Loop counters, pooling, sorting, voting and bound checks live in crucial
``*_ctl`` (or ``Sort``/``Vote``) regions and are never perturbed.
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    BoundMode,
    BoundSpec,
    Configuration,
    CrossLayerError,
    RegionClass,
    RegionDescriptor,
    RegionTable,
    check_configuration,
    validate_region_set,
)
from .faults import ACTION_CODES, EventLog, InjectionEvent, Injections
from .manifest import read_manifest, read_weights
from .mnist import Dataset, Sample, fixture_path, load_fixture
from .resilience import Action, clamp_array, in_bounds, protected_store_many

SIGMOID_BOUND = BoundSpec(-90.0, 10.0, BoundMode.CLAMP)

# dynamic-instruction proxy used to derive region time fractions
OP_COST = {
    "mac": 2,  # multiply + add
    "dist": 3,  # subtract + multiply + add
    "ctl": 2,  # loop-counter update + branch
    "check": 2,  # two comparisons
    "compare": 1,
    "sigmoid": 20,
    "relu": 1,
    "load": 2,  # load + scale
    "store": 1,
}

_PASSED = ACTION_CODES[Action.PASSED]
_CLAMPED = ACTION_CODES[Action.CLAMPED]
_DROPPED = ACTION_CODES[Action.DROPPED]


class WorkloadError(CrossLayerError):
    pass


class ShapeMismatch(WorkloadError):
    pass


class AttemptToDemoteInputLayer(WorkloadError):
    pass


class KTooLarge(WorkloadError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    # float64 keeps sigmoid(-90) a positive subnormal instead of 0
    return (1.0 / (1.0 + np.exp(-z.astype(np.float64)))).astype(np.float32)


@dataclass
class RegionCounts:
    cost: int = 0
    executions: int = 0
    stores: int = 0
    checks: int = 0


class Counter:
    """Instrumentation sink: per-region dynamic cost, executions, stores, checks."""

    def __init__(self):
        self.regions: dict[str, RegionCounts] = defaultdict(RegionCounts)

    def add(self, region: str, cost: int = 0, executions: int = 0, stores: int = 0, checks: int = 0) -> None:
        c = self.regions[region]
        c.cost += int(cost) + int(stores) * OP_COST["store"]
        c.executions += int(executions)
        c.stores += int(stores)
        c.checks += int(checks)


@dataclass(frozen=True)
class ExecutionTrace:
    predicted_label: int
    injected_events: list[InjectionEvent]
    layers: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class _Faults:
    """Injections split into batch-local sample positions for replay."""

    inj: Injections
    local: np.ndarray


def _dense(x: np.ndarray, w_t: np.ndarray, b: np.ndarray, chunk: int, bound: BoundSpec,
           faults: Optional[_Faults] = None):
    """Chunked sequential dense layer with a clamp checker after each chunk.

    ``w_t`` is (d_in, d_out). Execution ``e`` of the region is neuron
    ``e // n_chunks`` over chunk ``e % n_chunks``; step ``t`` is the partial
    sum after input ``chunk * (e % n_chunks) + t``. Returns the checked
    accumulators and, for faults, the replaced values and checker actions.
    """
    n, d_in = x.shape
    n_chunks = d_in // chunk
    acc = np.repeat(b[None, :].astype(np.float32), n, axis=0)
    x_t = np.ascontiguousarray(x.T)
    old = action = None
    by_step: dict[int, np.ndarray] = {}
    if faults is not None and len(faults.inj):
        inj = faults.inj
        neuron = inj.execution // n_chunks
        gidx = (inj.execution % n_chunks) * chunk + inj.step
        for g in np.unique(gidx):
            by_step[int(g)] = np.flatnonzero(gidx == g)
        old = np.empty(len(inj), np.float32)
        action = np.full(len(inj), _PASSED, np.int8)
        pending: list[np.ndarray] = []
    for i in range(d_in):
        acc += x_t[i][:, None] * w_t[i]
        hit = by_step.get(i)
        if hit is not None:
            rows, cols = faults.local[hit], neuron[hit]
            old[hit] = acc[rows, cols]
            acc[rows, cols] = faults.inj.value[hit]
            pending.append(hit)
        if (i + 1) % chunk == 0:
            if old is not None and pending:
                hit = np.concatenate(pending)
                ok = in_bounds(acc[faults.local[hit], neuron[hit]], bound.lower, bound.upper)
                action[hit] = np.where(ok, _PASSED, _CLAMPED)
                pending = []
            acc = clamp_array(acc, np.float32(bound.lower), np.float32(bound.upper))
    return acc, old, action


def _count_dense(counter: Optional[Counter], n: int, d_in: int, d_out: int, chunk: int,
                 region: str, ctl: str) -> None:
    if counter is None:
        return
    execs = n * d_out * (d_in // chunk)
    counter.add(region, cost=OP_COST["mac"] * n * d_in * d_out, executions=execs, stores=execs, checks=execs)
    counter.add(ctl, cost=execs * (OP_COST["ctl"] + OP_COST["check"]) + n * d_out * OP_COST["sigmoid"],
                stores=n * d_out)


def _localize(inj: Optional[Injections], affected: np.ndarray) -> Optional[_Faults]:
    if inj is None or not len(inj):
        return None
    return _Faults(inj, np.searchsorted(affected, inj.sample))


def _quiet():
    # faulted values are routinely NaN/inf; their propagation is the point
    return np.errstate(invalid="ignore", over="ignore")


def _argmax(out: np.ndarray) -> np.ndarray:
    return np.argmax(out, axis=1).astype(np.int64)


class Workload:
    """Common driver: cached fault-free reference plus exact replay of faulted samples."""

    name: str
    regions: RegionTable
    #: region id -> symbolic name of its injectable data-flow value
    targets: dict[str, str]
    input_region = "Input"

    def __init__(self, regions: Optional[RegionTable] = None):
        self._cache: dict[str, dict] = {}
        if regions is None:
            regions = self.measured_regions()
        if regions.workload != self.name:
            raise WorkloadError(f"region table is for {regions.workload}, not {self.name}")
        missing = set(self.layout()) ^ set(regions)
        if missing:
            raise WorkloadError(f"region table does not match {self.name} layout: {sorted(missing)}")
        self.regions = regions

    # subclasses -------------------------------------------------------
    def layout(self) -> dict[str, tuple[RegionClass, Optional[BoundSpec]]]:
        raise NotImplementedError

    def _reference(self, x: np.ndarray, counter: Optional[Counter] = None) -> dict:
        raise NotImplementedError

    def _replay(self, x: np.ndarray, ref: dict, draws: dict[str, Injections], log: EventLog,
                want_layers: bool) -> tuple[np.ndarray, dict]:
        raise NotImplementedError

    def _executions(self) -> dict[str, tuple[int, int]]:
        """Region id -> (executions per inference, live targets per execution)."""
        raise NotImplementedError

    # public -----------------------------------------------------------
    @property
    def injectable_targets(self) -> frozenset[str]:
        return frozenset(self.targets.values())

    def check_config(self, config: Configuration) -> None:
        check_configuration(config, self.regions)

    def run_batch(self, dataset: Dataset, config: Configuration, injector=None):
        """Predicted labels and the event log for every sample of ``dataset``."""
        self.check_config(config)
        x = np.asarray(dataset.images, dtype=np.float32)
        ref = self._cached_reference(x)
        log = EventLog()
        with _quiet():
            pred, _ = self._replay(x, ref, self._draw(config, injector, len(x)), log, want_layers=False)
        return pred, log

    def trace_batch(self, dataset: Dataset, config: Configuration, injector=None):
        """Like :meth:`run_batch`, also returning every intermediate layer for all samples."""
        self.check_config(config)
        x = np.asarray(dataset.images, dtype=np.float32)
        log = EventLog()
        with _quiet():
            pred, layers = self._replay(x, self._cached_reference(x), self._draw(config, injector, len(x)), log,
                                        want_layers=True)
        return pred, log, layers

    def run(self, sample: Sample, config: Configuration, injector=None) -> ExecutionTrace:
        self.check_config(config)
        x = np.asarray(sample.pixels, dtype=np.float32).reshape(1, 28, 28)
        log = EventLog()
        with _quiet():
            pred, layers = self._replay(x, self._reference(x), self._draw(config, injector, 1), log, want_layers=True)
        return ExecutionTrace(int(pred[0]), list(log), {k: v[0] for k, v in layers.items()})

    def predict(self, dataset: Dataset) -> np.ndarray:
        x = np.asarray(dataset.images, dtype=np.float32)
        return self._cached_reference(x)["pred"].copy()

    def profile(self) -> dict[str, RegionCounts]:
        """Instrumented counts for one fault-free inference."""
        counter = Counter()
        self._reference(np.zeros((1, 28, 28), np.float32), counter)
        return dict(counter.regions)

    def measured_regions(self) -> RegionTable:
        """Region table whose fractions and counts come from :meth:`profile`."""
        prof = self.profile()
        total = sum(c.cost for c in prof.values())
        out = []
        for rid, (cls, bound) in self.layout().items():
            c = prof[rid]
            out.append(RegionDescriptor(
                id=rid, workload=self.name, region_class=cls, time_fraction=c.cost / total,
                bound_spec=bound, store_count_fraction=c.stores / c.cost if c.cost else 0.0,
                check_count=c.checks // c.executions if c.executions else 0,
                executions=c.executions,
            ))
        return validate_region_set(out)

    # internals --------------------------------------------------------
    def _draw(self, config: Configuration, injector, n: int) -> dict[str, Injections]:
        if injector is None:
            return {}
        draws = {}
        for rid, (execs, targets) in self._executions().items():
            if rid not in config.non_crucial:
                continue
            inj = injector.draw(self.regions[rid], n, execs, targets)
            if inj is not None and len(inj):
                draws[rid] = inj
        return draws

    def _cached_reference(self, x: np.ndarray) -> dict:
        key = hashlib.sha1(x.tobytes()).hexdigest()
        ref = self._cache.get(key)
        if ref is None:
            if len(self._cache) >= 4:
                self._cache.pop(next(iter(self._cache)))
            ref = self._cache[key] = self._reference(x)
        return ref


# ---------------------------------------------------------------------------
# CNN


CONV_KERNELS, KSIZE, IMG = 8, 5, 28
CONV_OUT = IMG - KSIZE + 1  # 24
POOL = 2
POOLED = CONV_OUT // POOL  # 12
FEATURES = CONV_KERNELS * POOLED * POOLED  # 1152
CNN_HIDDEN = 32
CNN_CHUNK = 32
_TAPS = [(kh, kw) for kh in range(KSIZE) for kw in range(KSIZE)]


class CNNWorkload(Workload):
    """conv(8 x 5x5) -> drop check -> 2x2 max-pool -> ReLU -> FC(32, sigmoid) -> FC(10, sigmoid)."""

    name = "CNN_MNIST"
    targets = {"C": "conv_acc", "F": "fc_acc"}

    def __init__(self, weights: dict[str, np.ndarray], regions: Optional[RegionTable] = None):
        expected = {
            "conv.w": (CONV_KERNELS, KSIZE, KSIZE), "conv.b": (CONV_KERNELS,),
            "fc.w": (CNN_HIDDEN, FEATURES), "fc.b": (CNN_HIDDEN,),
            "out.w": (10, CNN_HIDDEN), "out.b": (10,),
        }
        _check_shapes(weights, expected)
        self.weights = {k: np.asarray(v, np.float32) for k, v in weights.items()}
        self.conv_w = self.weights["conv.w"]
        self.conv_b = self.weights["conv.b"]
        self.fc_wt = np.ascontiguousarray(self.weights["fc.w"].T)
        self.out_wt = np.ascontiguousarray(self.weights["out.w"].T)
        self.conv_hi = conv_static_bounds(self.conv_w, self.conv_b)
        self.conv_lo = -self.conv_hi
        super().__init__(regions)

    def layout(self):
        return {
            "Input": (RegionClass.CRUCIAL, None),
            "C": (RegionClass.NON_CRUCIAL_CANDIDATE, self.conv_envelope()),
            "C_ctl": (RegionClass.CRUCIAL, None),
            "F": (RegionClass.NON_CRUCIAL_CANDIDATE, SIGMOID_BOUND),
            "F_ctl": (RegionClass.CRUCIAL, None),
            "Out": (RegionClass.CRUCIAL, SIGMOID_BOUND),
        }

    def conv_envelope(self) -> BoundSpec:
        hi = float(self.conv_hi.max())
        return BoundSpec(-hi, hi, BoundMode.DROP)

    def _executions(self):
        return {"C": (CONV_KERNELS * CONV_OUT * CONV_OUT, len(_TAPS)),
                "F": (CNN_HIDDEN * (FEATURES // CNN_CHUNK), CNN_CHUNK)}

    def _conv(self, x: np.ndarray) -> np.ndarray:
        n = len(x)
        acc = np.repeat(self.conv_b[None, :, None, None], n, axis=0)
        acc = np.repeat(np.repeat(acc, CONV_OUT, axis=2), CONV_OUT, axis=3)
        for kh, kw in _TAPS:
            acc += x[:, None, kh:kh + CONV_OUT, kw:kw + CONV_OUT] * self.conv_w[None, :, kh, kw, None, None]
        return acc

    def _conv_cells(self, x, s, k, i, j, step, value):
        """Replay selected conv cells, replacing the partial sum after tap ``step``."""
        acc = self.conv_b[k].copy()
        old = np.empty(len(value), np.float32)
        for t, (kh, kw) in enumerate(_TAPS):
            acc = acc + x[s, i + kh, j + kw] * self.conv_w[k, kh, kw]
            hit = step == t
            if hit.any():
                old[hit] = acc[hit]
                acc[hit] = value[hit]
        return acc, old

    def _pool(self, conv: np.ndarray) -> np.ndarray:
        n = len(conv)
        valid = in_bounds(conv, self.conv_lo[None, :, None, None], self.conv_hi[None, :, None, None])
        cand = np.where(valid, conv, np.float32(-np.inf))
        pooled = cand.reshape(n, CONV_KERNELS, POOLED, POOL, POOLED, POOL).max(axis=(3, 5))
        # every candidate dropped: commit 0, which lies inside the symmetric bounds
        pooled = np.where(np.isneginf(pooled), np.float32(0.0), pooled)
        return np.maximum(pooled, np.float32(0.0)).reshape(n, FEATURES)

    def _head(self, feat, f_faults=None):
        pre, old, action = _dense(feat, self.fc_wt, self.weights["fc.b"], CNN_CHUNK, SIGMOID_BOUND, f_faults)
        hidden = sigmoid(pre)
        out_pre, _, _ = _dense(hidden, self.out_wt, self.weights["out.b"], CNN_HIDDEN, SIGMOID_BOUND)
        out = sigmoid(out_pre)
        return pre, hidden, out, old, action

    def _reference(self, x, counter=None):
        n = len(x)
        conv = self._conv(x)
        feat = self._pool(conv)
        fc_pre, hidden, out, _, _ = self._head(feat)
        if counter is not None:
            cells = n * CONV_KERNELS * CONV_OUT * CONV_OUT
            counter.add("Input", cost=n * IMG * IMG * OP_COST["load"], executions=n, stores=n * IMG * IMG)
            counter.add("C", cost=cells * len(_TAPS) * OP_COST["mac"], executions=cells, stores=cells, checks=cells)
            pooled = n * FEATURES
            counter.add("C_ctl", cost=cells * (OP_COST["ctl"] + OP_COST["check"])
                        + pooled * ((POOL * POOL - 1) * OP_COST["compare"] + OP_COST["relu"]), stores=pooled)
            _count_dense(counter, n, FEATURES, CNN_HIDDEN, CNN_CHUNK, "F", "F_ctl")
            counter.add("Out", cost=n * 10 * (CNN_HIDDEN * OP_COST["mac"] + OP_COST["ctl"] + OP_COST["check"]
                                              + OP_COST["sigmoid"] + OP_COST["compare"]),
                        executions=n, stores=n * 10)
        return {"conv": conv, "features": feat, "fc_pre": fc_pre, "hidden": hidden, "output": out,
                "pred": _argmax(out)}

    def _replay(self, x, ref, draws, log, want_layers):
        inj_c, inj_f = draws.get("C"), draws.get("F")
        pred = ref["pred"].copy()
        parts = [d.sample for d in (inj_c, inj_f) if d is not None]
        layers = {k: ref[k] for k in ("conv", "features", "fc_pre", "hidden", "output")} if want_layers else {}
        if not parts:
            return pred, layers
        affected = np.unique(np.concatenate(parts))
        conv = ref["conv"][affected]
        if inj_c is not None:
            e = inj_c.execution
            k, i, j = e // (CONV_OUT * CONV_OUT), (e // CONV_OUT) % CONV_OUT, e % CONV_OUT
            acc, old = self._conv_cells(x, inj_c.sample, k, i, j, inj_c.step, inj_c.value)
            protected_store_many(conv, (np.searchsorted(affected, inj_c.sample), k, i, j), acc, log.stores)
            ok = in_bounds(acc, self.conv_lo[k], self.conv_hi[k])
            log.add(inj_c, self.targets["C"], old, np.where(ok, _PASSED, _DROPPED))
        feat = self._pool(conv)
        f_faults = _localize(inj_f, affected)
        fc_pre, hidden, out, old, action = self._head(feat, f_faults)
        if f_faults is not None:
            log.add(inj_f, self.targets["F"], old, action)
        pred[affected] = _argmax(out)
        if want_layers:
            layers = {k: v.copy() for k, v in layers.items()}
            for name, val in (("conv", conv), ("features", feat), ("fc_pre", fc_pre), ("hidden", hidden),
                              ("output", out)):
                layers[name][affected] = val
        return pred, layers


def conv_static_bounds(w: np.ndarray, b: np.ndarray, max_input: float = 1.0) -> np.ndarray:
    """Per-kernel bound ``L1(kernel) * max_input + |bias|``; no fault-free cell can exceed it."""
    hi = np.abs(w.astype(np.float64)).sum(axis=(1, 2)) * max_input + np.abs(b.astype(np.float64))
    # widen by one float32 ulp-scale margin so rounding never trips the checker
    return (hi * (1 + 1e-6) + 1e-6).astype(np.float32)


# ---------------------------------------------------------------------------
# MLP


MLP_SIZES = (IMG * IMG, 64, 32, 10)
MLP_CHUNK = 16


class MLPWorkload(Workload):
    """Input staging -> I1(64, sigmoid) -> I2(32, sigmoid) -> Out(10, sigmoid)."""

    name = "MLP_MNIST"
    targets = {"I1": "fc_acc", "I2": "fc_acc"}

    def __init__(self, weights: dict[str, np.ndarray], regions: Optional[RegionTable] = None):
        d0, d1, d2, d3 = MLP_SIZES
        expected = {"I1.w": (d1, d0), "I1.b": (d1,), "I2.w": (d2, d1), "I2.b": (d2,),
                    "Out.w": (d3, d2), "Out.b": (d3,)}
        _check_shapes(weights, expected)
        self.weights = {k: np.asarray(v, np.float32) for k, v in weights.items()}
        self.wt = {name: np.ascontiguousarray(self.weights[f"{name}.w"].T) for name in ("I1", "I2", "Out")}
        super().__init__(regions)

    def layout(self):
        return {
            "Input": (RegionClass.CRUCIAL, None),
            "I1": (RegionClass.NON_CRUCIAL_CANDIDATE, SIGMOID_BOUND),
            "I1_ctl": (RegionClass.CRUCIAL, None),
            "I2": (RegionClass.NON_CRUCIAL_CANDIDATE, SIGMOID_BOUND),
            "I2_ctl": (RegionClass.CRUCIAL, None),
            "Out": (RegionClass.CRUCIAL, SIGMOID_BOUND),
        }

    def check_config(self, config):
        if self.input_region in config.non_crucial:
            raise AttemptToDemoteInputLayer("the MLP input layer is always crucial")
        super().check_config(config)

    def _executions(self):
        d0, d1, d2, _ = MLP_SIZES
        return {"I1": (d1 * (d0 // MLP_CHUNK), MLP_CHUNK), "I2": (d2 * (d1 // MLP_CHUNK), MLP_CHUNK)}

    def _forward(self, flat, f1=None, f2=None):
        pre1, old1, act1 = _dense(flat, self.wt["I1"], self.weights["I1.b"], MLP_CHUNK, SIGMOID_BOUND, f1)
        h1 = sigmoid(pre1)
        pre2, old2, act2 = _dense(h1, self.wt["I2"], self.weights["I2.b"], MLP_CHUNK, SIGMOID_BOUND, f2)
        h2 = sigmoid(pre2)
        pre3, _, _ = _dense(h2, self.wt["Out"], self.weights["Out.b"], MLP_CHUNK, SIGMOID_BOUND)
        out = sigmoid(pre3)
        return {"h1": h1, "h2": h2, "output": out}, (old1, act1), (old2, act2)

    def _reference(self, x, counter=None):
        n = len(x)
        layers, _, _ = self._forward(x.reshape(n, -1))
        if counter is not None:
            d0, d1, d2, d3 = MLP_SIZES
            counter.add("Input", cost=n * d0 * OP_COST["load"], executions=n, stores=n * d0)
            _count_dense(counter, n, d0, d1, MLP_CHUNK, "I1", "I1_ctl")
            _count_dense(counter, n, d1, d2, MLP_CHUNK, "I2", "I2_ctl")
            out_chunks = d2 // MLP_CHUNK
            counter.add("Out", cost=n * d3 * (d2 * OP_COST["mac"] + out_chunks * (OP_COST["ctl"] + OP_COST["check"])
                                              + OP_COST["sigmoid"] + OP_COST["compare"]),
                        executions=n, stores=n * d3)
        return dict(layers, pred=_argmax(layers["output"]))

    def _replay(self, x, ref, draws, log, want_layers):
        i1, i2 = draws.get("I1"), draws.get("I2")
        pred = ref["pred"].copy()
        layers = {k: ref[k] for k in ("h1", "h2", "output")} if want_layers else {}
        parts = [d.sample for d in (i1, i2) if d is not None]
        if not parts:
            return pred, layers
        affected = np.unique(np.concatenate(parts))
        f1, f2 = _localize(i1, affected), _localize(i2, affected)
        new, (old1, act1), (old2, act2) = self._forward(x[affected].reshape(len(affected), -1), f1, f2)
        if f1 is not None:
            log.add(i1, self.targets["I1"], old1, act1)
        if f2 is not None:
            log.add(i2, self.targets["I2"], old2, act2)
        pred[affected] = _argmax(new["output"])
        if want_layers:
            layers = {k: v.copy() for k, v in layers.items()}
            for name in layers:
                layers[name][affected] = new[name]
        return pred, layers


# ---------------------------------------------------------------------------
# KNN


class KNNWorkload(Workload):
    """Squared-Euclidean k-nearest-neighbour vote over a training set."""

    name = "KNN_MNIST"
    targets = {"Distance": "dist_acc"}

    def __init__(self, train: Dataset, regions: Optional[RegionTable] = None, k: int = 5):
        if k < 1 or k > len(train):
            raise KTooLarge(f"k={k} with {len(train)} training samples")
        self.k = k
        self.train = train
        self.train_x = np.ascontiguousarray(train.flat, dtype=np.float32)
        self.train_xt = np.ascontiguousarray(self.train_x.T)
        self.train_y = np.asarray(train.labels, dtype=np.int64)
        super().__init__(regions)

    def layout(self):
        return {
            "Input": (RegionClass.CRUCIAL, None),
            "Distance": (RegionClass.NON_CRUCIAL_CANDIDATE, None),
            "Sort": (RegionClass.CRUCIAL, None),
            "Vote": (RegionClass.CRUCIAL, None),
        }

    def _executions(self):
        return {"Distance": (len(self.train_y), self.train_x.shape[1])}

    def distances(self, q: np.ndarray) -> np.ndarray:
        acc = np.zeros((len(q), len(self.train_y)), np.float32)
        for d in range(q.shape[1]):
            diff = q[:, d, None] - self.train_xt[d]
            acc += diff * diff
        return acc

    def _pair_distances(self, q, s, j, step, value):
        terms = q[s] - self.train_x[j]
        terms = terms * terms
        acc = np.zeros(len(s), np.float32)
        old = np.empty(len(s), np.float32)
        for d in range(terms.shape[1]):
            acc = acc + terms[:, d]
            hit = step == d
            if hit.any():
                old[hit] = acc[hit]
                acc[hit] = value[hit]
        return acc, old

    def vote(self, dist: np.ndarray) -> np.ndarray:
        """Majority over the k nearest; ties go to the class met first in distance order."""
        # stable sort keeps index order on equal distances; NaN sorts last
        order = np.argsort(dist, axis=1, kind="stable")[:, :self.k]
        labels = self.train_y[order]
        n = len(dist)
        counts = np.zeros((n, 10), np.int64)
        np.add.at(counts, (np.repeat(np.arange(n), self.k), labels.ravel()), 1)
        best = counts.max(axis=1)
        is_best = counts[np.arange(n)[:, None], labels] == best[:, None]
        return labels[np.arange(n), np.argmax(is_best, axis=1)]

    def _reference(self, x, counter=None):
        n = len(x)
        q = x.reshape(n, -1)
        dist = self.distances(q)
        if counter is not None:
            m, d = self.train_x.shape
            counter.add("Input", cost=n * d * OP_COST["load"], executions=n, stores=n * d)
            counter.add("Distance", cost=n * m * d * OP_COST["dist"], executions=n * m, stores=n * m)
            counter.add("Sort", cost=n * (m * OP_COST["ctl"] + math.ceil(m * math.log2(m)) * OP_COST["compare"]),
                        executions=n, stores=n * self.k)
            counter.add("Vote", cost=n * (self.k + 10) * OP_COST["compare"], executions=n, stores=n)
        return {"distances": dist, "pred": self.vote(dist)}

    def _replay(self, x, ref, draws, log, want_layers):
        inj = draws.get("Distance")
        pred = ref["pred"].copy()
        layers = {"distances": ref["distances"]} if want_layers else {}
        if inj is None:
            return pred, layers
        affected = np.unique(inj.sample)
        q = x.reshape(len(x), -1)
        acc, old = self._pair_distances(q, inj.sample, inj.execution, inj.step, inj.value)
        dist = ref["distances"][affected]
        protected_store_many(dist, (np.searchsorted(affected, inj.sample), inj.execution), acc, log.stores)
        log.add(inj, self.targets["Distance"], old, np.full(len(inj), _PASSED, np.int8))
        pred[affected] = self.vote(dist)
        if want_layers:
            full = ref["distances"].copy()
            full[affected] = dist
            layers = {"distances": full}
        return pred, layers


# ---------------------------------------------------------------------------
# loading


WORKLOADS = ("CNN_MNIST", "MLP_MNIST", "KNN_MNIST")
_FILES = {
    "CNN_MNIST": ("cnn_mnist.weights", "cnn_mnist.manifest"),
    "MLP_MNIST": ("mlp_mnist.weights", "mlp_mnist.manifest"),
    "KNN_MNIST": (None, "knn_mnist.manifest"),
}


def _check_shapes(weights: dict[str, np.ndarray], expected: dict[str, tuple[int, ...]]) -> None:
    if set(weights) != set(expected):
        raise ShapeMismatch(f"weight tensors {sorted(weights)} != expected {sorted(expected)}")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise ShapeMismatch(f"{name}: shape {tuple(weights[name].shape)} != {shape}")


def load_workload(name: str, *, manifest: str | Path | None = None, weights: str | Path | None = None,
                  train: Optional[Dataset] = None, k: int = 5, region_overrides: Optional[dict] = None) -> Workload:
    """Load a bundled workload, optionally overriding its manifest, weights or training set.

    ``region_overrides`` maps a RegionDescriptor field name to ``{region_id: value}``.
    """
    if name not in _FILES:
        raise WorkloadError(f"unknown workload {name!r}; choose from {WORKLOADS}")
    weight_file, manifest_file = _FILES[name]
    manifest = manifest or fixture_path(manifest_file)
    if name == "KNN_MNIST":
        regions = read_manifest(manifest)
        if region_overrides:
            regions = regions.with_overrides(**region_overrides)
        return KNNWorkload(train if train is not None else load_fixture("train"), regions, k=k)
    w = read_weights(weights or fixture_path(weight_file))
    static = {}
    if name == "CNN_MNIST":
        _check_shapes(w, {"conv.w": (CONV_KERNELS, KSIZE, KSIZE), "conv.b": (CONV_KERNELS,),
                          "fc.w": (CNN_HIDDEN, FEATURES), "fc.b": (CNN_HIDDEN,),
                          "out.w": (10, CNN_HIDDEN), "out.b": (10,)})
        hi = float(conv_static_bounds(w["conv.w"], w["conv.b"]).max())
        static["C"] = BoundSpec(-hi, hi, BoundMode.DROP)
    regions = read_manifest(manifest, static)
    if region_overrides:
        regions = regions.with_overrides(**region_overrides)
    cls = CNNWorkload if name == "CNN_MNIST" else MLPWorkload
    return cls(w, regions)


def run_cnn(sample: Sample, instance: CNNWorkload, config: Configuration, injector=None) -> ExecutionTrace:
    return instance.run(sample, config, injector)


def run_mlp(sample: Sample, instance: MLPWorkload, config: Configuration, injector=None) -> ExecutionTrace:
    return instance.run(sample, config, injector)


def run_knn(sample: Sample, instance: KNNWorkload, config: Configuration, injector=None) -> ExecutionTrace:
    return instance.run(sample, config, injector)

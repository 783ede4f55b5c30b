"""Walkthrough: one fault, then many.

Run with ``python demos/01_fault_injection.py``.
"""

# %% Load the bundled CNN and the 100-image test subset
import numpy as np

from crosslayer import Configuration, FaultSpec, all_candidates
from crosslayer.faults import InjectionPlan, ScriptedInjector, run_trial
from crosslayer.mnist import load_fixture
from crosslayer.workloads import load_workload

cnn = load_workload("CNN_MNIST")
test = load_fixture("test")
print(cnn.regions)
print("fault-free accuracy:", np.mean(cnn.predict(test) == test.labels))

# %% A single huge value in the FC accumulator
# With F unprotected the sigmoid-input checker clamps it to 10; this neuron
# was already saturated, so the output does not move.
cfg = all_candidates(cnn.regions)
clean = cnn.run(test[0], cfg)
hit = cnn.run(test[0], cfg, ScriptedInjector([("F", 0, 0, 0, 500.0)]))
for ev in hit.injected_events:
    print(ev)
print("hidden[0] before/after:", clean.layers["hidden"][0], hit.layers["hidden"][0])
print("label before/after:", clean.predicted_label, hit.predicted_label)

# %% Same fault, F protected by redundant execution: nothing is injected
protected = Configuration("CNN_MNIST", frozenset({"C"}))
print("events under HaRE on F:", cnn.run(test[0], protected, ScriptedInjector([("F", 0, 0, 0, 500.0)])).injected_events)

# %% Random faults at a high error rate
spec = FaultSpec(error_rate=0.01, master_seed=1)
for t in range(3):
    res = run_trial(cnn, test, cfg, InjectionPlan(spec, cfg.non_crucial, t))
    print(f"trial {t}: accuracy {res.accuracy:.2f}, events {res.events.summary()}")

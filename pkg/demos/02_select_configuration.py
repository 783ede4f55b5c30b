"""Pick the regions that can skip redundant execution, then price the result.

Run with ``python demos/02_select_configuration.py``. Uses 200 trials to
stay under a minute; the CLI default is 1000.
"""

# %%
from crosslayer.analysis import MonteCarlo, SelectionConstraints, select_configuration
from crosslayer.core import FaultSpec
from crosslayer.mnist import load_fixture
from crosslayer.perf import calibrate, improvement_over_hare, price
from crosslayer.workloads import load_workload

test = load_fixture("test")
TRIALS = 200

# %% Selection per workload at a tight threshold
for name in ("CNN_MNIST", "MLP_MNIST", "KNN_MNIST"):
    wl = load_workload(name)
    constraints = SelectionConstraints(error_rate=0.001, accuracy_loss_threshold=0.01, trials=TRIALS)
    runner = MonteCarlo(wl, test, constraints.fault_spec, TRIALS)
    res = select_configuration(wl, test, constraints, runner)
    cm = calibrate(1.63, wl.regions)
    rep = res.final_report
    print(f"\n{name}: loss {rep.accuracy_loss:.4f} +- {rep.stderr:.4f}")
    print("  per-region loss (all candidates):",
          {r: round(v, 4) for r, v in res.history[0].per_region_loss.items()})
    print("  demoted:", res.demotion_sequence)
    print("  kept non-crucial:", sorted(res.final_config.non_crucial))
    print(f"  time {price(res.final_config, wl.regions, cm).normalized_time:.4f} vs HaRE 1.63,"
          f" improvement {improvement_over_hare(res.final_config, wl.regions, cm):.1f}%")

# %% Where the CNN cost goes
cnn = load_workload("CNN_MNIST")
cfg = select_configuration(cnn, test, SelectionConstraints(0.001, 0.05, TRIALS)).final_config
print("\nCNN breakdown:", price(cfg, cnn.regions, calibrate(1.63)).breakdown)

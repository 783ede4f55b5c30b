"""Threshold x error-rate sweep for the CNN, printed as a small table.

Run with ``python demos/03_sweep.py``; the same grid is available as
``crosslayer sweep --config <file>``.
"""

# %%
from crosslayer.analysis import sweep
from crosslayer.mnist import load_fixture
from crosslayer.workloads import load_workload

rows = sweep(load_workload("CNN_MNIST"), load_fixture("test"),
             thresholds=[0.10, 0.05, 0.03], error_rates=[0.001, 0.01, 0.05, 0.1], trials=100)

# %%
print(f"{'error':>7} {'thresh':>6} {'kept':>5} {'loss':>7} {'time':>7} {'gain%':>6}")
for r in rows:
    print(f"{r.error_rate:7.3f} {r.threshold:6.2f} {','.join(r.non_crucial) or '-':>5} "
          f"{r.accuracy_loss:7.4f} {r.cl_time:7.4f} {r.improvement_pct:6.1f}")

# %% Loss grows with the error rate; the selector gives back protection to stay under the threshold.

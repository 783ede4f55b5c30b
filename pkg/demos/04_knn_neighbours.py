"""How the vote size changes KNN's tolerance to distance faults.

Faulty distances are not bound-checked, so a single tiny corrupted distance
can steal a neighbour slot. More neighbours dilute that vote.
Run with ``python demos/04_knn_neighbours.py``.
"""

# %%
from crosslayer.analysis import MonteCarlo
from crosslayer.core import FaultSpec, all_candidates
from crosslayer.mnist import load_fixture
from crosslayer.workloads import load_workload

test = load_fixture("test")

# %%
for k in (1, 3, 5, 9):
    knn = load_workload("KNN_MNIST", k=k)
    rep = MonteCarlo(knn, test, FaultSpec(0.001, 0), 100).evaluate(all_candidates(knn.regions), per_region=False)
    print(f"k={k}: fault-free {rep.fault_free_accuracy:.2f}, loss {rep.accuracy_loss:.4f} +- {rep.stderr:.4f}")

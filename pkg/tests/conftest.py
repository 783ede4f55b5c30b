import warnings

import numpy as np
import pytest

from crosslayer.mnist import load_fixture
from crosslayer.workloads import load_workload


@pytest.fixture(scope="session")
def test_set():
    return load_fixture("test")


@pytest.fixture(scope="session")
def train_set():
    return load_fixture("train")


@pytest.fixture(scope="session")
def cnn():
    return load_workload("CNN_MNIST")


@pytest.fixture(scope="session")
def mlp():
    return load_workload("MLP_MNIST")


@pytest.fixture(scope="session")
def knn():
    return load_workload("KNN_MNIST")


@pytest.fixture(scope="session")
def workloads(cnn, mlp, knn):
    return {"CNN_MNIST": cnn, "MLP_MNIST": mlp, "KNN_MNIST": knn}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

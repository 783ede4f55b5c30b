"""Rebuild the bundled MNIST fixtures, trained weights and region manifests.

Source: the 5000-sample MNIST extract shipped inside the ``mlxtend`` wheel
(``mlxtend/data/data/mnist_5k.csv.gz``: 784 pixel columns + label).

    python tools/build_fixtures.py path/to/mnist_5k.csv.gz

Outputs go to ``src/crosslayer/data``. Training needs torch, which is not a
runtime dependency of the package.
"""

import argparse
import gzip
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

from crosslayer.manifest import format_manifest, write_weights
from crosslayer.mnist import Dataset, FIXTURE_FILES, serialize_idx_images, serialize_idx_labels, subset_indices
from crosslayer.workloads import CNNWorkload, KNNWorkload, MLPWorkload

DATA = Path(__file__).resolve().parents[1] / "src" / "crosslayer" / "data"
SPLIT_SEED = 20170101
TRAIN_SEED = 7


def write_gz(path: Path, payload: bytes) -> None:
    # mtime=0 keeps the archive byte-stable across rebuilds
    with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
        gz.write(payload)


def dataset(raw: np.ndarray, labels: np.ndarray, tag: str) -> Dataset:
    return Dataset(raw.astype(np.float32) / np.float32(255.0), labels.astype(np.uint8), tag)


class TorchCNN(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, 8, 5)
        self.fc = nn.Linear(1152, 32)
        self.out = nn.Linear(32, 10)

    def forward(self, x):
        x = torch.relu(nn.functional.max_pool2d(self.conv(x), 2))
        return self.out(torch.sigmoid(self.fc(x.flatten(1))))


class TorchMLP(nn.Module):
    def __init__(self):
        super().__init__()
        self.l1 = nn.Linear(784, 64)
        self.l2 = nn.Linear(64, 32)
        self.out = nn.Linear(32, 10)

    def forward(self, x):
        x = torch.sigmoid(self.l1(x.flatten(1)))
        return self.out(torch.sigmoid(self.l2(x)))


def train(model: nn.Module, x: np.ndarray, y: np.ndarray, epochs: int) -> nn.Module:
    torch.manual_seed(TRAIN_SEED)
    xt = torch.from_numpy(x).unsqueeze(1)
    yt = torch.from_numpy(y.astype(np.int64))
    opt = torch.optim.Adam(model.parameters(), lr=2e-3, weight_decay=1e-4)
    gen = torch.Generator().manual_seed(TRAIN_SEED)
    for epoch in range(epochs):
        perm = torch.randperm(len(xt), generator=gen)
        for start in range(0, len(xt), 64):
            idx = perm[start:start + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(model(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    return model


def as_np(t: torch.Tensor) -> np.ndarray:
    return t.detach().numpy().astype(np.float32)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", type=Path)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args(argv)

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.float64)
    raw = table[:, :784].reshape(-1, 28, 28).round().astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)
    full = dataset(raw, labels, "mnist5k")

    test_idx = subset_indices(full, 100, SPLIT_SEED)
    rest = np.setdiff1d(np.arange(len(full)), test_idx)
    train_idx = rest[subset_indices(dataset(raw[rest], labels[rest], "rest"), 1000, SPLIT_SEED + 1)]

    DATA.mkdir(parents=True, exist_ok=True)
    write_gz(DATA / FIXTURE_FILES["test_images"], serialize_idx_images(raw[test_idx]))
    write_gz(DATA / FIXTURE_FILES["test_labels"], serialize_idx_labels(labels[test_idx]))
    write_gz(DATA / FIXTURE_FILES["train_images"], serialize_idx_images(raw[train_idx]))
    write_gz(DATA / FIXTURE_FILES["train_labels"], serialize_idx_labels(labels[train_idx]))

    x_fit = raw[rest].astype(np.float32) / np.float32(255.0)
    y_fit = labels[rest]
    test = Dataset.from_files(DATA / FIXTURE_FILES["test_images"], DATA / FIXTURE_FILES["test_labels"])
    train_fixture = Dataset.from_files(DATA / FIXTURE_FILES["train_images"], DATA / FIXTURE_FILES["train_labels"])

    cnn = train(TorchCNN(), x_fit, y_fit, args.epochs)
    cnn_w = {"conv.w": as_np(cnn.conv.weight)[:, 0], "conv.b": as_np(cnn.conv.bias),
             "fc.w": as_np(cnn.fc.weight), "fc.b": as_np(cnn.fc.bias),
             "out.w": as_np(cnn.out.weight), "out.b": as_np(cnn.out.bias)}
    write_weights(DATA / "cnn_mnist.weights", cnn_w)

    mlp = train(TorchMLP(), x_fit, y_fit, args.epochs)
    mlp_w = {"I1.w": as_np(mlp.l1.weight), "I1.b": as_np(mlp.l1.bias),
             "I2.w": as_np(mlp.l2.weight), "I2.b": as_np(mlp.l2.bias),
             "Out.w": as_np(mlp.out.weight), "Out.b": as_np(mlp.out.bias)}
    write_weights(DATA / "mlp_mnist.weights", mlp_w)

    instances = {
        "cnn_mnist": CNNWorkload(cnn_w),
        "mlp_mnist": MLPWorkload(mlp_w),
        "knn_mnist": KNNWorkload(train_fixture),
    }
    for stem, inst in instances.items():
        measured = inst.measured_regions()
        static = frozenset({"C"}) if stem == "cnn_mnist" else frozenset()
        header = (f"{inst.name} region manifest, measured from an instrumented fault-free inference\n"
                  "(dynamic-instruction cost proxy, see crosslayer.workloads.OP_COST)")
        (DATA / f"{stem}.manifest").write_text(format_manifest(measured, static, header), encoding="utf-8")
        acc = float(np.mean(inst.predict(test) == test.labels))
        nc = sum(r.time_fraction for r in measured.candidates)
        print(f"{inst.name}: fault-free accuracy {acc:.2%}, non-crucial time {nc:.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

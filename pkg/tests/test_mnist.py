import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crosslayer.mnist import (
    BadMagic,
    DataError,
    Dataset,
    LabelOutOfRange,
    SubsetTooLarge,
    TruncatedPayload,
    load_fixture,
    parse_idx_images,
    parse_idx_images_raw,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
    subset,
)


@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6))))
def test_image_roundtrip(raw):
    assert np.array_equal(parse_idx_images_raw(serialize_idx_images(raw)), raw)


@given(arrays(np.uint8, st.integers(0, 50), elements=st.integers(0, 9)))
def test_label_roundtrip(labels):
    assert np.array_equal(parse_idx_labels(serialize_idx_labels(labels)), labels)


def test_pixels_are_scaled_into_unit_interval():
    raw = np.array([[[0, 255], [128, 1]]], np.uint8)
    px = parse_idx_images(serialize_idx_images(raw))
    assert px.dtype == np.float32
    assert px.min() == 0.0 and px.max() == 1.0
    assert px[0, 1, 0] == np.float32(128) / np.float32(255)


def test_bad_magic():
    labels = serialize_idx_labels(np.array([1, 2], np.uint8))
    with pytest.raises(BadMagic):
        parse_idx_images(labels)
    with pytest.raises(BadMagic):
        parse_idx_labels(serialize_idx_images(np.zeros((1, 2, 2), np.uint8)))


def test_truncated_payloads():
    data = serialize_idx_images(np.zeros((2, 3, 3), np.uint8))
    with pytest.raises(TruncatedPayload):
        parse_idx_images(data[:-1])
    with pytest.raises(TruncatedPayload):
        parse_idx_images(data[:10])
    with pytest.raises(TruncatedPayload):
        parse_idx_labels(b"\x00\x00")


def test_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        parse_idx_labels(serialize_idx_labels(np.array([3, 10], np.uint8)))


def test_files_may_be_gzipped(tmp_path):
    raw = np.arange(2 * 28 * 28, dtype=np.uint32).astype(np.uint8).reshape(2, 28, 28)
    (tmp_path / "img.gz").write_bytes(gzip.compress(serialize_idx_images(raw)))
    (tmp_path / "lab").write_bytes(serialize_idx_labels(np.array([4, 7], np.uint8)))
    ds = Dataset.from_files(tmp_path / "img.gz", tmp_path / "lab")
    assert len(ds) == 2
    assert ds[1].label == 7
    assert ds[0].pixels.shape == (784,)


def test_fixture_sizes_and_ranges(test_set, train_set):
    assert len(test_set) == 100 and len(train_set) == 1000
    for ds in (test_set, train_set):
        assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0
        assert set(np.unique(ds.labels)) == set(range(10))
    assert not test_set.images.flags.writeable


def test_dataset_rejects_mismatched_lengths():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 28, 28), np.float32), np.zeros(3, np.uint8), "x")


def test_subset_is_deterministic_and_stratified(train_set):
    a = subset(train_set, 100, 5)
    b = subset(train_set, 100, 5)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    _, full = np.unique(train_set.labels, return_counts=True)
    _, part = np.unique(a.labels, return_counts=True)
    assert np.all(np.abs(part - full * 100 / 1000) < 1)
    assert not np.array_equal(subset(train_set, 100, 6).labels, a.labels) or \
        not np.array_equal(subset(train_set, 100, 6).images, a.images)


def test_subset_bounds(test_set):
    with pytest.raises(SubsetTooLarge):
        subset(test_set, 101, 0)
    assert len(subset(test_set, 100, 0)) == 100


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 1000), st.integers(0, 2**32))
def test_subset_size_is_exact(n, seed):
    assert len(subset(load_fixture("train"), n, seed)) == n

import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgreed.data import (dirichlet_partition, load_idx, split_server_set, synthetic_blobs)
from fedgreed.errors import FormatError, InvalidInputError, PartitionInfeasibleError
from fedgreed.model import Dataset, LossOracle, OptimizerState


def write_idx_images(path, images, magic=0x00000803):
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", magic, n, rows, cols) + images.astype(np.uint8).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def write_idx_labels(path, labels, magic=0x00000801):
    payload = struct.pack(">II", magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(10, 4, 3)).astype(np.uint8)
    images[0, 0, 0] = 255
    labels = np.arange(10) % 7
    write_idx_images(tmp_path / "img.idx", images)
    write_idx_labels(tmp_path / "lab.idx", labels)
    return tmp_path / "img.idx", tmp_path / "lab.idx", images, labels


def test_load_idx(idx_pair):
    img, lab, images, labels = idx_pair
    ds = load_idx(img, lab)
    assert len(ds) == 10 and ds.n_features == 12
    assert ds.num_classes == 7
    assert ds.features[0, 0] == 1.0
    np.testing.assert_allclose(ds.features, images.reshape(10, -1) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_load_idx_gzip(tmp_path):
    images = np.full((3, 2, 2), 51, dtype=np.uint8)
    write_idx_images(tmp_path / "img.gz", images)
    write_idx_labels(tmp_path / "lab.gz", [0, 1, 2])
    ds = load_idx(tmp_path / "img.gz", tmp_path / "lab.gz", num_classes=10)
    assert ds.num_classes == 10
    np.testing.assert_allclose(ds.features, 0.2)


def test_load_idx_wrong_magic(idx_pair):
    img, lab, _, _ = idx_pair
    with pytest.raises(FormatError, match="lab.idx|img.idx") as err:
        load_idx(img, img)
    assert "offset 0" in str(err.value)


def test_load_idx_truncated(tmp_path):
    images = np.zeros((5, 2, 2), dtype=np.uint8)
    write_idx_images(tmp_path / "img.idx", images)
    raw = (tmp_path / "img.idx").read_bytes()
    (tmp_path / "img.idx").write_bytes(raw[:-3])
    write_idx_labels(tmp_path / "lab.idx", [0] * 5)
    with pytest.raises(FormatError, match="truncated"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_load_idx_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "img.idx", np.zeros((5, 2, 2), dtype=np.uint8))
    write_idx_labels(tmp_path / "lab.idx", [0] * 4)
    with pytest.raises(FormatError, match="lab.idx"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_blobs_deterministic_and_balanced():
    a = synthetic_blobs(103, 5, 4, 3.0, seed=9)
    b = synthetic_blobs(103, 5, 4, 3.0, seed=9)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    counts = a.class_counts()
    assert counts.max() - counts.min() <= 1


def _train_accuracy(data, steps=400):
    oracle = LossOracle(data.n_features, data.num_classes)
    params = np.zeros(oracle.dim)
    opt = OptimizerState("adam", learning_rate=0.05)
    for _ in range(steps):
        params = opt.step(params, oracle.gradient(params, data))
    return oracle.accuracy(params, data)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_well_separated_blobs_are_learnable(seed):
    assert _train_accuracy(synthetic_blobs(100, 2, 2, 10.0, seed)) == 1.0


def test_zero_separation_is_chance():
    data = synthetic_blobs(2000, 2, 4, 0.0, seed=3)
    held_out = synthetic_blobs(2000, 2, 4, 0.0, seed=4)
    oracle = LossOracle(2, 4)
    params = np.zeros(oracle.dim)
    opt = OptimizerState("adam", learning_rate=0.05)
    for _ in range(300):
        params = opt.step(params, oracle.gradient(params, data))
    assert abs(oracle.accuracy(params, held_out) - 0.25) < 0.1


def _check_plan(plan, data):
    union = np.concatenate(plan.assignments)
    assert union.size == len(data)
    np.testing.assert_array_equal(np.sort(union), np.arange(len(data)))
    assert all(a.size > 0 for a in plan.assignments)
    np.testing.assert_array_equal(plan.class_counts(data).sum(axis=0), data.class_counts())


def test_single_client_gets_everything():
    data = synthetic_blobs(50, 2, 3, 1.0, seed=0)
    plan = dirichlet_partition(data, 1, 0.1, seed=5)
    np.testing.assert_array_equal(plan.assignments[0], np.arange(50))


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.05, 100.0), seed=st.integers(0, 2**31), n_clients=st.integers(1, 12))
def test_partition_disjoint_exhaustive(alpha, seed, n_clients):
    data = synthetic_blobs(300, 2, 5, 1.0, seed=1)
    _check_plan(dirichlet_partition(data, n_clients, alpha, seed), data)


def test_partition_deterministic():
    data = synthetic_blobs(300, 2, 5, 1.0, seed=1)
    a = dirichlet_partition(data, 7, 0.5, seed=3)
    b = dirichlet_partition(data, 7, 0.5, seed=3)
    for x, y in zip(a.assignments, b.assignments):
        np.testing.assert_array_equal(x, y)


def test_partition_infeasible():
    data = Dataset(np.zeros((3, 1)), np.array([0, 0, 0]), 1)
    with pytest.raises(PartitionInfeasibleError):
        dirichlet_partition(data, 5, 1.0, seed=0)


def test_partition_retry_when_client_empty():
    # 12 samples of a single class over 10 clients at alpha=0.1 rarely covers everyone
    data = Dataset(np.zeros((12, 1)), np.zeros(12, dtype=int), 1)
    with pytest.raises(PartitionInfeasibleError, match="100"):
        dirichlet_partition(data, 10, 0.01, seed=0)
    plan = dirichlet_partition(Dataset(np.zeros((400, 1)), np.zeros(400, dtype=int), 1), 4, 1.0, seed=0)
    assert plan.attempts >= 1


def test_partition_rejects_bad_args():
    data = synthetic_blobs(20, 2, 2, 1.0, seed=0)
    with pytest.raises(InvalidInputError):
        dirichlet_partition(data, 0, 1.0, 0)
    with pytest.raises(InvalidInputError):
        dirichlet_partition(data, 2, 0.0, 0)


def test_split_sizes_and_disjoint():
    data = synthetic_blobs(11, 2, 2, 1.0, seed=0)
    split = split_server_set(data, seed=1)
    assert len(split.selection_set) == 6 and len(split.evaluation_set) == 5
    assert set(split.selection_indices).isdisjoint(split.evaluation_indices)
    assert sorted([*split.selection_indices, *split.evaluation_indices]) == list(range(11))
    even = split_server_set(synthetic_blobs(10, 2, 2, 1.0, seed=0), seed=1)
    assert len(even.selection_set) == len(even.evaluation_set) == 5


def test_split_deterministic():
    data = synthetic_blobs(40, 2, 2, 1.0, seed=0)
    a, b = split_server_set(data, 4), split_server_set(data, 4)
    np.testing.assert_array_equal(a.selection_indices, b.selection_indices)


def test_split_too_small():
    with pytest.raises(InvalidInputError):
        split_server_set(synthetic_blobs(1, 2, 2, 1.0, seed=0), 0)

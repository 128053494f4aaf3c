import gzip
import struct

import numpy as np
import pytest

from guided_es.datasets import (
    BatchIterator,
    Dataset,
    IdxParseError,
    encode_idx_images,
    encode_idx_labels,
    load_mnist,
    parse_idx_images,
    parse_idx_labels,
    synthetic_blobs,
)


@pytest.fixture
def idx_files(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (7, 4, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, 7, dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx.gz"
    ip.write_bytes(encode_idx_images(images))
    lp.write_bytes(gzip.compress(encode_idx_labels(labels)))
    return images, labels, ip, lp


def test_hand_built_header():
    data = struct.pack(">IIII", 2051, 1, 2, 2) + bytes([0, 255, 51, 102])
    np.testing.assert_allclose(parse_idx_images(data), [[0.0, 1.0, 0.2, 0.4]])
    assert parse_idx_labels(struct.pack(">II", 2049, 3) + bytes([9, 0, 4])).tolist() == [9, 0, 4]


def test_roundtrip_and_gzip(idx_files):
    images, labels, ip, lp = idx_files
    ds = load_mnist(ip, lp)
    np.testing.assert_allclose(ds.features, images.reshape(7, 12) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    assert len(load_mnist(ip, lp, limit=3)) == 3


@pytest.mark.parametrize("data, match", [
    (b"\x00\x00", "truncated magic"),
    (struct.pack(">IIII", 2049, 1, 1, 1) + b"\x00", "bad magic"),
    (struct.pack(">II", 2051, 1), "truncated dimension"),
    (struct.pack(">IIII", 2051, 2, 2, 2) + b"\x00" * 7, "payload"),
    (struct.pack(">IIII", 2051, 2**31, 2**31, 2**31), "overflow"),
])
def test_image_errors(data, match):
    with pytest.raises(IdxParseError, match=match):
        parse_idx_images(data)


def test_label_errors():
    with pytest.raises(IdxParseError, match="out of range") as err:
        parse_idx_labels(struct.pack(">II", 2049, 3) + bytes([1, 12, 3]))
    assert err.value.offset == 9
    with pytest.raises(IdxParseError, match="bad magic"):
        parse_idx_labels(struct.pack(">IIII", 2051, 1, 1, 1) + b"\x00")


def test_mismatched_counts(tmp_path):
    (tmp_path / "i").write_bytes(encode_idx_images(np.zeros((2, 2, 2))))
    (tmp_path / "l").write_bytes(encode_idx_labels([1, 2, 3]))
    with pytest.raises(ValueError):
        load_mnist(tmp_path / "i", tmp_path / "l")


def test_blobs_are_seeded_and_bounded():
    a = synthetic_blobs(4, 25, 6, 0.1, 3)
    b = synthetic_blobs(4, 25, 6, 0.1, 3)
    assert np.array_equal(a.features, b.features)
    assert len(a) == 100 and a.feature_dim == 6 and a.num_classes == 4
    assert a.features.min() >= 0 and a.features.max() <= 1
    assert np.bincount(a.labels).tolist() == [25] * 4
    with pytest.raises(ValueError):
        synthetic_blobs(0, 1, 1, 0.1)


def test_blobs_separable_with_small_spread():
    ds = synthetic_blobs(5, 40, 10, 0.02, 1)
    centers = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(5)])
    nearest = np.argmin(((ds.features[:, None] - centers) ** 2).sum(-1), axis=1)
    assert np.array_equal(nearest, ds.labels)


def test_batches_cover_each_epoch_once():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10, dtype=int), 1)
    it = BatchIterator(ds, 4, seed=2)
    epoch = [next(it)[0].ravel() for _ in range(3)]
    assert [len(b) for b in epoch] == [4, 4, 2]
    assert sorted(np.concatenate(epoch).tolist()) == list(range(10))
    again = BatchIterator(ds, 4, seed=2)
    assert np.array_equal(next(again)[0], epoch[0][:, None])
    assert not np.array_equal(np.concatenate(it.epoch_indices(1)), np.concatenate(it.epoch_indices(0)))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)

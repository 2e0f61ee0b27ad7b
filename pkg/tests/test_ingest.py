"""IDX parsing and grid adaptation tests on synthetic fixtures."""
import gzip
import struct

import numpy as np
import pytest

from pqnet import ingest


def idx_image_bytes(images: np.ndarray) -> bytes:
    n, h, w = images.shape
    return struct.pack(">IIII", ingest.IMAGE_MAGIC, n, h, w) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", ingest.LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def test_parse_small_image_file():
    img = np.array([[[0, 128], [255, 64]]], dtype=np.uint8)
    parsed = ingest.parse_idx(idx_image_bytes(img))
    assert parsed.shape == (1, 2, 2)
    assert np.array_equal(parsed[0], [[0, 128], [255, 64]])


def test_parse_round_trip_lossless():
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=7, dtype=np.uint8)
    assert np.array_equal(ingest.parse_idx(idx_image_bytes(imgs)), imgs)
    assert np.array_equal(ingest.parse_idx(idx_label_bytes(labels)), labels)


def test_parse_gzip_transparent():
    imgs = np.arange(8, dtype=np.uint8).reshape(1, 2, 4)
    packed = gzip.compress(idx_image_bytes(imgs))
    assert np.array_equal(ingest.parse_idx(packed), imgs)


def test_parse_rejects_bad_magic():
    with pytest.raises(ingest.IdxFormatError, match="magic"):
        ingest.parse_idx(struct.pack(">II", 0xDEADBEEF, 0))


def test_parse_rejects_truncation():
    imgs = np.zeros((4, 28, 28), dtype=np.uint8)
    data = idx_image_bytes(imgs)[:-100]
    with pytest.raises(ingest.IdxFormatError, match="truncated"):
        ingest.parse_idx(data)


def test_parse_rejects_dim_overflow():
    header = struct.pack(">IIII", ingest.IMAGE_MAGIC, 1, 100_000, 2)
    with pytest.raises(ingest.IdxFormatError, match="implausible"):
        ingest.parse_idx(header + b"\x00" * 10)


def test_load_pair_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(idx_image_bytes(np.zeros((3, 4, 4), dtype=np.uint8)))
    (tmp_path / "lab").write_bytes(idx_label_bytes(np.zeros(5, dtype=np.uint8)))
    with pytest.raises(ingest.IdxFormatError, match="mismatch"):
        ingest.load_idx_pair(tmp_path / "img", tmp_path / "lab")


def test_to_grid_constant_image():
    grid = ingest.to_grid(np.full((28, 28), 200, dtype=np.uint8))
    assert grid.shape == (16, 16)
    assert np.allclose(grid, 1 / 16)  # constant grid, unit L2 norm


def test_to_grid_unit_norm():
    rng = np.random.default_rng(1)
    imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    grids = ingest.to_grid(imgs)
    assert np.abs(np.linalg.norm(grids.reshape(5, -1), axis=1) - 1).max() < 1e-12


def test_to_grid_rejects_zero_image():
    with pytest.raises(ValueError, match="all-zero"):
        ingest.to_grid(np.zeros((28, 28), dtype=np.uint8))


def test_to_grid_mass_ordering_preserved():
    # brighter of two images stays brighter in grid L1 mass before
    # normalization: compare unnormalized box-filter outputs
    rng = np.random.default_rng(2)
    dim = np.clip(rng.integers(0, 80, size=(28, 28)), 0, 255).astype(np.uint8)
    bright = np.clip(dim.astype(int) + 60, 0, 255).astype(np.uint8)
    w = ingest._area_weights(28, 16)
    mass_dim = (w @ dim.astype(float) @ w.T).sum()
    mass_bright = (w @ bright.astype(float) @ w.T).sum()
    assert mass_bright > mass_dim


def test_to_grid_patches_all_encodable():
    # blank corners would be un-encodable without the floor
    img = np.zeros((28, 28), dtype=np.uint8)
    img[10:18, 10:18] = 255
    grid = ingest.to_grid(img)
    tiles = grid.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(16, 16)
    assert np.linalg.norm(tiles, axis=1).min() > 0


def test_area_weights_partition_of_unity():
    w = ingest._area_weights(28, 16)
    assert np.allclose(w.sum(axis=1), 1.0)
    w = ingest._area_weights(16, 16)
    assert np.allclose(w, np.eye(16))


def test_select_balanced_and_dataset_conversion():
    rng = np.random.default_rng(3)
    imgs = rng.integers(1, 256, size=(60, 28, 28), dtype=np.uint8)
    labels = np.repeat(np.arange(4, dtype=np.uint8), 15)
    iset = ingest.IdxImageSet(imgs, labels)
    train, test = ingest.select_balanced(iset, [0, 1, 2, 3], 10, 3, np.random.default_rng(0))
    assert len(train.labels) == 40 and len(test.labels) == 12
    assert np.array_equal(np.bincount(train.labels), [10, 10, 10, 10])
    ds = ingest.image_set_to_dataset(train, [0, 1, 2, 3])
    assert ds.states.shape == (40, 256)
    assert np.abs(np.linalg.norm(ds.states, axis=1) - 1).max() < 1e-12
    with pytest.raises(ValueError, match="class 0"):
        ingest.select_balanced(iset, [0], 20, 10, np.random.default_rng(0))

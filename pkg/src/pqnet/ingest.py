"""IDX image datasets (MNIST family) adapted to the model's 16x16 grid input.

Files are the classic big-endian IDX format: magic 0x00000803 for image
tensors (count x rows x cols of uint8) and 0x00000801 for label vectors.
Gzip-compressed files are detected by their two-byte signature. Nothing is
ever downloaded; callers supply paths, typically under ``PQ_DATA_DIR``.

Images downsample to 16x16 with a separable area (box-filter) kernel, gain
a tiny constant floor so every 4x4 patch stays amplitude-encodable, and
are L2-normalized to make them valid statevector surrogates.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

#: Added to every pixel of a nonzero image before normalization so blank
#: regions (digit corners) still carry encodable mass.
GRID_FLOOR = 1e-6


class IdxFormatError(ValueError):
    """IDX stream is malformed (magic, truncation, or dimension overflow)."""


@dataclass
class IdxImageSet:
    images: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) uint8


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def parse_idx(data: bytes) -> np.ndarray:
    """Parse one IDX stream: images (3-D uint8) or labels (1-D uint8),
    dispatched on the magic number."""
    data = _maybe_gunzip(data)
    if len(data) < 8:
        raise IdxFormatError("stream shorter than an IDX header")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic == LABEL_MAGIC:
        (count,) = struct.unpack_from(">I", data, 4)
        if len(data) < 8 + count:
            raise IdxFormatError(f"label stream truncated: {count} items declared")
        return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).copy()
    if magic == IMAGE_MAGIC:
        if len(data) < 16:
            raise IdxFormatError("image stream shorter than its header")
        count, rows, cols = struct.unpack_from(">III", data, 4)
        if rows > 4096 or cols > 4096:
            raise IdxFormatError(f"implausible image dimensions {rows}x{cols}")
        need = count * rows * cols
        if len(data) < 16 + need:
            raise IdxFormatError(
                f"image stream truncated: header declares {need} pixels"
            )
        return (
            np.frombuffer(data, dtype=np.uint8, count=need, offset=16)
            .reshape(count, rows, cols)
            .copy()
        )
    raise IdxFormatError(f"unknown IDX magic 0x{magic:08x}")


def load_idx_pair(images_path, labels_path) -> IdxImageSet:
    images = parse_idx(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes())
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path} does not hold an image tensor")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path} does not hold a label vector")
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image/label count mismatch: {len(images)} images, {len(labels)} labels"
        )
    return IdxImageSet(images=images, labels=labels)


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) row-stochastic matrix averaging source pixels over the
    overlap of each destination bin, the separable box filter."""
    w = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / scale


def to_grid(images: np.ndarray, floor: float = GRID_FLOOR) -> np.ndarray:
    """Area-downsample images to 16x16, add the encoding floor, and
    L2-normalize each grid. All-zero images are an error."""
    arr = np.asarray(images, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    zero = np.flatnonzero(arr.reshape(arr.shape[0], -1).sum(axis=1) == 0)
    if zero.size:
        raise ValueError(f"all-zero images cannot be encoded: rows {zero.tolist()}")
    wr = _area_weights(arr.shape[1], 16)
    wc = _area_weights(arr.shape[2], 16)
    grids = np.einsum("ij,njk,lk->nil", wr, arr, wc) + floor
    grids /= np.linalg.norm(grids.reshape(grids.shape[0], -1), axis=1)[:, None, None]
    return grids[0] if single else grids


def select_balanced(
    image_set: IdxImageSet,
    classes: list[int],
    per_class_train: int,
    per_class_test: int,
    rng,
) -> tuple[IdxImageSet, IdxImageSet]:
    """Seeded balanced subset: shuffle each class, take train then test."""
    tr_idx, te_idx = [], []
    need = per_class_train + per_class_test
    for cls in classes:
        members = np.flatnonzero(image_set.labels == cls)
        if len(members) < need:
            raise ValueError(
                f"class {cls} has {len(members)} images, need {need}"
            )
        perm = rng.permutation(members)
        tr_idx.append(perm[:per_class_train])
        te_idx.append(perm[per_class_train:need])
    tr_idx = np.concatenate(tr_idx)
    te_idx = np.concatenate(te_idx)
    return (
        IdxImageSet(image_set.images[tr_idx], image_set.labels[tr_idx]),
        IdxImageSet(image_set.images[te_idx], image_set.labels[te_idx]),
    )


def image_set_to_dataset(image_set: IdxImageSet, classes: list[int]):
    """Convert images to a stored dataset of real 256-amplitude states with
    labels remapped to 0..len(classes)-1, reusing the binary dataset format."""
    from .datagen import Dataset

    grids = to_grid(image_set.images)
    states = grids.reshape(len(image_set.labels), 256).astype(np.complex128)
    remap = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([remap[int(l)] for l in image_set.labels], dtype=np.uint8)
    return Dataset(states=states, labels=labels)

"""Dataset ingestion (IDX, CIFAR-10 binary, synthetic) and minibatching."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # N x C x H x W, float64 in [0, 1]
    labels: np.ndarray  # N class indices
    num_classes: int
    name: str

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"{self.name}: images must be N*C*H*W, got {self.images.shape}")
        n = self.images.shape[0]
        if n < 1:
            raise DataError(f"{self.name}: empty dataset")
        if self.labels.shape != (n,):
            raise DataError(f"{self.name}: {n} images but labels shaped {self.labels.shape}")
        if self.images.min() < 0 or self.images.max() > 1:
            raise DataError(f"{self.name}: pixel values outside [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"{self.name}: label outside [0, {self.num_classes})")

    def __len__(self):
        return self.images.shape[0]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices, name=None) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes,
                       name or f"{self.name}[{len(idx)}]")

    def head(self, n: int) -> "Dataset":
        n = min(n, len(self))
        return self.subset(np.arange(n), f"{self.name}[:{n}]")


@dataclass(frozen=True)
class LabeledBatch:
    images: np.ndarray  # N x C x H x W
    targets: np.ndarray  # N x K rows on the simplex
    indices: np.ndarray  # positions in the parent dataset

    @property
    def classes(self) -> np.ndarray:
        return self.targets.argmax(axis=1)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ------------------------------------------------------------------ IDX files


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) - header != count:
        raise DataError(f"{path}: payload has {len(raw) - header} bytes, dims {dims} need {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10, name: str | None = None) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= num_classes:
        raise DataError(f"label {labels.max()} outside [0, {num_classes})")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes, name or Path(images_path).stem)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write N x H x W (or N x 1 x H x W) images in [0, 1] plus labels as IDX files."""
    imgs = np.asarray(images)
    if imgs.ndim == 4:
        if imgs.shape[1] != 1:
            raise DataError("IDX images must be single-channel")
        imgs = imgs[:, 0]
    pix = np.rint(np.clip(imgs, 0.0, 1.0) * 255.0).astype(np.uint8)
    lab = np.asarray(labels).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(">3I", *pix.shape))
        f.write(pix.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">I", IDX_LABELS_MAGIC))
        f.write(struct.pack(">I", lab.shape[0]))
        f.write(lab.tobytes())


# ----------------------------------------------------------------- CIFAR-10


def load_cifar_bin(path, max_n: int | None = None, name: str | None = None) -> Dataset:
    """Read the CIFAR-10 binary layout: 1 label byte then 1024 R, G, B bytes each."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise DataError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    if max_n is not None:
        records = records[:max_n]
    if records.shape[0] == 0:
        raise DataError(f"{path}: no records selected (max_n={max_n})")
    labels = records[:, 0].astype(np.int64)
    x = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(x, labels, 10, name or Path(path).stem)


def write_cifar_bin(path, images: np.ndarray, labels: np.ndarray) -> None:
    pix = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


# --------------------------------------------------------------- synthetic


def _grid(dim: int) -> tuple[int, int]:
    d1 = int(math.isqrt(dim))
    while d1 > 1 and dim % d1:
        d1 -= 1
    if d1 < 2:
        raise DataError(f"dim={dim} cannot be arranged as a d1 x d2 grid with d1, d2 >= 2")
    return d1, dim // d1


def synth_blobs(num_classes: int, n_per_class: int, dim: int, separation: float,
                seed: int, sigma: float = 0.05) -> Dataset:
    """Isotropic Gaussian clusters whose means sit ``separation`` apart.

    ``separation`` is in units of the cluster std ``sigma``. Means lie on a
    scaled simplex around 0.5 so pairwise distances are all equal, and samples
    are clipped into [0, 1].
    """
    if num_classes < 2 or dim < 2:
        raise DataError("synth_blobs needs K >= 2 and dim >= 2")
    if separation < 0:
        raise DataError("separation must be nonnegative")
    d1, d2 = _grid(dim)
    if num_classes > dim:
        raise DataError("synth_blobs needs dim >= K")
    rng = np.random.default_rng(seed)
    # orthonormal class directions; pairwise distance between e_i/sqrt2 is 1
    basis, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
    means = 0.5 + (separation * sigma / math.sqrt(2.0)) * basis.T
    labels = np.repeat(np.arange(num_classes), n_per_class)
    x = means[labels] + sigma * rng.standard_normal((labels.size, dim))
    perm = rng.permutation(labels.size)
    x = np.clip(x[perm], 0.0, 1.0).reshape(-1, 1, d1, d2)
    return Dataset(x, labels[perm], num_classes, f"blobs-k{num_classes}-s{separation:g}-seed{seed}")


# stroke skeletons of the ten digits on a unit square (x right, y down)
_GLYPHS = {
    0: [[(0.5, 0.1), (0.25, 0.25), (0.22, 0.6), (0.35, 0.88), (0.65, 0.88),
         (0.78, 0.6), (0.75, 0.25), (0.5, 0.1)]],
    1: [[(0.35, 0.28), (0.55, 0.1), (0.55, 0.9)]],
    2: [[(0.25, 0.28), (0.45, 0.1), (0.7, 0.15), (0.75, 0.4), (0.25, 0.88), (0.8, 0.88)]],
    3: [[(0.25, 0.15), (0.7, 0.12), (0.72, 0.38), (0.45, 0.5), (0.75, 0.62),
         (0.72, 0.86), (0.25, 0.88)]],
    4: [[(0.65, 0.9), (0.65, 0.1), (0.2, 0.62), (0.82, 0.62)]],
    5: [[(0.75, 0.12), (0.3, 0.12), (0.28, 0.45), (0.65, 0.45), (0.75, 0.7),
         (0.6, 0.88), (0.25, 0.85)]],
    6: [[(0.7, 0.12), (0.35, 0.35), (0.25, 0.7), (0.45, 0.9), (0.7, 0.78),
         (0.68, 0.55), (0.3, 0.58)]],
    7: [[(0.2, 0.12), (0.8, 0.12), (0.45, 0.9)]],
    8: [[(0.5, 0.5), (0.28, 0.3), (0.5, 0.1), (0.72, 0.3), (0.5, 0.5), (0.25, 0.7),
         (0.5, 0.9), (0.75, 0.7), (0.5, 0.5)]],
    9: [[(0.7, 0.42), (0.35, 0.45), (0.3, 0.2), (0.6, 0.1), (0.72, 0.3), (0.68, 0.9)]],
}


def _segments(polylines) -> np.ndarray:
    segs = [(a, b) for line in polylines for a, b in zip(line[:-1], line[1:])]
    return np.asarray(segs, dtype=np.float64)  # S x 2 x 2


def synth_digits(n: int, seed: int, size: int = 28) -> Dataset:
    """Procedurally rendered digit-like glyphs (10 classes, 1 x size x size).

    Each sample jitters its class skeleton's control points, applies a random
    affine map (rotation, scale, shear, shift) and renders anti-aliased strokes
    of random width, then adds faint background noise. Deterministic in seed.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1)  # P x 2
    out = np.empty((n, 1, size, size))
    for i, lab in enumerate(labels):
        segs = _segments(_GLYPHS[int(lab)])
        segs = segs + rng.normal(0.0, 0.03, size=segs.shape)
        th = rng.uniform(-0.25, 0.25)
        sc = rng.uniform(0.8, 1.05)
        sh = rng.uniform(-0.25, 0.25)
        a = sc * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        a = a @ np.array([[1.0, sh], [0.0, 1.0]])
        shift = rng.uniform(-2.5, 2.5, size=2)
        pts = (segs - 0.5) @ a.T * (size - 8) + (size - 1) / 2 + shift
        p0, p1 = pts[:, 0], pts[:, 1]  # S x 2
        d = p1 - p0
        t = ((pix[:, None, :] - p0[None]) * d[None]).sum(-1) / np.maximum((d * d).sum(-1), 1e-9)
        t = np.clip(t, 0.0, 1.0)
        near = p0[None] + t[..., None] * d[None]
        dist = np.sqrt(((pix[:, None, :] - near) ** 2).sum(-1)).min(axis=1)
        width = rng.uniform(0.9, 1.8)
        ink = np.clip(width + 0.5 - dist, 0.0, 1.0) * rng.uniform(0.85, 1.0)
        img = ink + np.abs(rng.normal(0.0, 0.04, size=ink.shape))
        out[i, 0] = np.clip(img, 0.0, 1.0).reshape(size, size)
    return Dataset(out, labels.astype(np.int64), 10, f"digits-n{n}-seed{seed}")


# ---------------------------------------------------------------- batching


def epoch_rng(master_seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([master_seed, epoch, stream])


def minibatch_iter(dataset: Dataset, batch_size: int, epoch_seed, epoch: int = 0
                   ) -> Iterator[LabeledBatch]:
    """Shuffled minibatches; the permutation is a function of (epoch_seed, epoch).

    The trailing short batch is kept. Targets are one-hot rows.
    """
    n = len(dataset)
    if not 1 <= batch_size <= n:
        raise DataError(f"batch_size {batch_size} outside [1, {n}]")
    perm = epoch_rng(epoch_seed, epoch).permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        yield LabeledBatch(dataset.images[idx], one_hot(dataset.labels[idx], dataset.num_classes), idx)

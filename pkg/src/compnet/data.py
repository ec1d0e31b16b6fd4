"""Dataset ingestion: CIFAR-10 binary batches and a synthetic shape set.

The synthetic set is a single-channel stand-in with parametric shapes, used
wherever a small, self-contained, learnable dataset is needed.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


class DataError(RuntimeError):
    """Raised when a dataset file is missing or malformed."""


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, c, h, w) float64
    labels: np.ndarray  # (n,) int64
    class_count: int
    channel_means: np.ndarray = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be 4-d, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("labels length must match image count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if self.channel_means is None:
            self.channel_means = np.zeros(self.images.shape[1])

    @property
    def n(self):
        return self.images.shape[0]


def _read_batch(path):
    if not os.path.isfile(path):
        raise DataError(f"missing dataset file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        offset = (raw.size // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DataError(
            f"truncated record in {path}: file ends at byte {raw.size}, "
            f"last whole record ends at byte {offset}"
        )
    recs = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = recs[:, 0].astype(np.int64)
    images = recs[:, 1:].reshape(-1, 3, 32, 32).astype(float) / 255.0
    return images, labels


def load_cifar10(data_dir):
    """Load the standard binary batches; center both splits on train means.

    Returns (train, test) with 50000/10000 images, pixels scaled to [0, 1]
    before the per-channel training means are subtracted.
    """
    train_parts = [_read_batch(os.path.join(data_dir, f)) for f in CIFAR_TRAIN_FILES]
    test_parts = [_read_batch(os.path.join(data_dir, f)) for f in CIFAR_TEST_FILES]
    images = np.concatenate([p[0] for p in train_parts])
    labels = np.concatenate([p[1] for p in train_parts])
    t_images = np.concatenate([p[0] for p in test_parts])
    t_labels = np.concatenate([p[1] for p in test_parts])

    means = images.mean(axis=(0, 2, 3))
    images -= means[None, :, None, None]
    t_images -= means[None, :, None, None]
    train = LabeledDataset(images, labels, 10, channel_means=means)
    test = LabeledDataset(t_images, t_labels, 10, channel_means=means)
    return train, test


def normalize_pair(train: LabeledDataset, test: LabeledDataset):
    """Center both splits on the training set's per-channel means."""
    means = train.images.mean(axis=(0, 2, 3))
    return (
        LabeledDataset(train.images - means[None, :, None, None], train.labels,
                       train.class_count, channel_means=means),
        LabeledDataset(test.images - means[None, :, None, None], test.labels,
                       test.class_count, channel_means=means),
    )


# ------------------------------------------------------------ synthetic shapes

SHAPE_NAMES = ("disk", "square", "ring", "cross", "triangle", "diamond")


def _soft(d, edge=1.0):
    # smooth 1 -> 0 transition across the shape edge, for easier learning
    return np.clip(0.5 - d / edge, 0.0, 1.0)


def _render_shape(kind, h, w, rng):
    cy = h / 2 + rng.uniform(-h / 8, h / 8)
    cx = w / 2 + rng.uniform(-w / 8, w / 8)
    r = min(h, w) * rng.uniform(0.18, 0.32)
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    dy, dx = ys - cy, xs - cx
    theta = rng.uniform(0, np.pi)
    ry = dy * np.cos(theta) - dx * np.sin(theta)
    rx = dy * np.sin(theta) + dx * np.cos(theta)
    if kind == "disk":
        d = np.hypot(dy, dx) - r
    elif kind == "square":
        d = np.maximum(np.abs(ry), np.abs(rx)) - r
    elif kind == "ring":
        d = np.abs(np.hypot(dy, dx) - r) - max(1.5, 0.25 * r)
    elif kind == "cross":
        bar = max(1.5, 0.3 * r)
        d = np.minimum(
            np.maximum(np.abs(ry) - bar, np.abs(rx) - r),
            np.maximum(np.abs(rx) - bar, np.abs(ry) - r),
        )
    elif kind == "triangle":
        # equilateral-ish: intersection of three half planes
        d = np.maximum(ry - r / 2, np.maximum(-ry / 2 - rx * 0.866, -ry / 2 + rx * 0.866) - r / 2)
    elif kind == "diamond":
        d = (np.abs(ry) + np.abs(rx)) - r * 1.2
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return _soft(d) * rng.uniform(0.7, 1.0)


def synth_shapes(seed, count, classes, dims=(128, 96)) -> LabeledDataset:
    """Deterministic grayscale shape dataset; labels assigned round-robin.

    dims is (width, height). Class k draws shape SHAPE_NAMES[k] in a
    randomized pose with light additive noise.
    """
    if classes < 1 or classes > len(SHAPE_NAMES):
        raise ValueError(f"classes must be in [1, {len(SHAPE_NAMES)}]")
    if count < classes:
        raise ValueError("count must be >= classes")
    w, h = dims
    rng = np.random.default_rng(seed)
    images = np.empty((count, 1, h, w))
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        k = i % classes
        img = _render_shape(SHAPE_NAMES[k], h, w, rng)
        img += rng.normal(0.0, 0.02, size=img.shape)
        images[i, 0] = img
        labels[i] = k
    return LabeledDataset(images, labels, classes)


def export_pgm_dataset(ds: LabeledDataset, out_dir):
    """Write every image as a PGM plus a labels.csv index; returns file count."""
    from .viz import write_pgm

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(ds.n):
        name = f"img{i:05d}.pgm"
        write_pgm(ds.images[i].mean(axis=0), os.path.join(out_dir, name))
        rows.append(f"{name},{int(ds.labels[i])}")
    with open(os.path.join(out_dir, "labels.csv"), "w") as fh:
        fh.write("file,label\n")
        fh.write("\n".join(rows) + "\n")
    return ds.n


def load_pgm_dataset(data_dir, class_count=None) -> LabeledDataset:
    """Read back a directory written by export_pgm_dataset (8-bit grayscale,
    so pixel values land back in [0, 1] on a 1/255 grid)."""
    from .viz import read_pgm

    index = os.path.join(data_dir, "labels.csv")
    if not os.path.isfile(index):
        raise DataError(f"missing dataset index: {index}")
    names, labels = [], []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            names.append(row["file"])
            labels.append(int(row["label"]))
    if not names:
        raise DataError(f"{index} lists no images")
    images = np.stack(
        [read_pgm(os.path.join(data_dir, n)) / 255.0 for n in names]
    )[:, None, :, :]
    labels = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    return LabeledDataset(images, labels, class_count)

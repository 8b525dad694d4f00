"""Synthetic desk-scale datasets, the CIFAR-10 binary reader, and splits."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .rng import SplitMix64, check_seed

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    """Images ``(N, C, H, W)`` and integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) == 0 or len(self.images) != len(self.labels):
            raise DataError("dataset must be non-empty with one label per image")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.images)):
            raise DataError("images contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, idx, split=None):
        return Dataset(self.images[idx], self.labels[idx], split or self.split, self.num_classes)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    train_per_class: int = 500
    test_per_class: int = 125
    image_size: int = 16
    noise: float = 0.6
    seed: int = 0
    domain: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ConfigurationError("image_size must be >= 8")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigurationError("sample counts must be >= 1")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")
        check_seed(self.seed)


def class_templates(num_classes, size, domain=0):
    """One grayscale template per class in [0, 1].

    Each template is an oriented sinusoidal grating plus a Gaussian blob; the
    orientation, frequency and blob position depend on the class.  ``domain``
    selects a disjoint family of templates (rotated gratings, other
    frequencies, mirrored blob positions) for cross-domain experiments.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = np.empty((num_classes, size, size))
    for c in range(num_classes):
        angle = np.pi * (c + 0.5 * domain) / num_classes
        freq = 2.0 + (c % 3) + 1.5 * domain
        phase = 0.7 * c + 1.3 * domain
        grating = np.cos(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
        t = 2 * np.pi * (c + 0.5 * domain) / num_classes
        cx, cy = 0.5 + 0.28 * np.cos(t), 0.5 + 0.28 * np.sin(t)
        if domain % 2:
            cx = 1.0 - cx
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 0.12**2))
        out[c] = 0.5 + 0.2 * grating + 0.3 * blob - 0.15
    return np.clip(out, 0.0, 1.0)


def _synth_split(templates, per_class, noise, rng):
    k, h, w = templates.shape
    labels = np.repeat(np.arange(k), per_class)
    pixels = templates[labels]
    if noise > 0:
        pixels = pixels + noise * rng.normal(pixels.size).reshape(pixels.shape)
    pixels = np.clip(pixels, 0.0, 1.0)
    images = np.repeat(pixels[:, None, :, :], 3, axis=1)
    return images, labels


def synth_dataset(spec: SynthSpec = SynthSpec()):
    """Train and test sets of noisy class templates, mean-centred per channel.

    The channel means come from the train split and are subtracted from both.
    """
    templates = class_templates(spec.num_classes, spec.image_size, spec.domain)
    root = SplitMix64(spec.seed).spawn(f"synth-domain-{spec.domain}")
    tr_x, tr_y = _synth_split(templates, spec.train_per_class, spec.noise, root.spawn("train"))
    te_x, te_y = _synth_split(templates, spec.test_per_class, spec.noise, root.spawn("test"))
    perm = root.spawn("order").permutation(len(tr_y))
    tr_x, tr_y = tr_x[perm], tr_y[perm]
    mean = channel_means(tr_x)
    train = Dataset(tr_x - mean, tr_y, "train", spec.num_classes)
    test = Dataset(te_x - mean, te_y, "test", spec.num_classes)
    return train, test


def channel_means(images):
    return np.asarray(images, dtype=np.float64).mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)


# -- CIFAR-10 binary ------------------------------------------------------

def parse_cifar10_bytes(raw: bytes, source="<bytes>"):
    """Decode CIFAR-10 binary records: 1 label byte then 1024 R, G, B bytes each."""
    if len(raw) % CIFAR_RECORD:
        offset = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
        raise DataError(
            f"{source}: truncated record at byte offset {offset} "
            f"(size {len(raw)} is not a multiple of {CIFAR_RECORD})"
        )
    if not raw:
        raise DataError(f"{source}: empty file")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise DataError(f"{source}: label {labels[bad]} out of range at byte offset {bad * CIFAR_RECORD}")
    pixels = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return pixels, labels


def write_cifar10_bytes(pixels, labels) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    return np.concatenate([labels, pixels], axis=1).tobytes()


def read_cifar10_file(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataError(f"missing CIFAR-10 batch file {path}") from None
    return parse_cifar10_bytes(raw, os.fspath(path))


def load_cifar10_binary(directory):
    """Read ``data_batch_1..5.bin`` and ``test_batch.bin`` from ``directory``.

    Pixels are scaled to [0, 1] and centred with the train channel means.
    """
    parts = [read_cifar10_file(os.path.join(directory, f)) for f in CIFAR_TRAIN_FILES]
    tr_x = np.concatenate([p for p, _ in parts]) / 255.0
    tr_y = np.concatenate([l for _, l in parts])
    te_x, te_y = read_cifar10_file(os.path.join(directory, CIFAR_TEST_FILES[0]))
    te_x = te_x / 255.0
    mean = channel_means(tr_x)
    return (
        Dataset(tr_x - mean, tr_y, "train", 10),
        Dataset(te_x - mean, te_y, "test", 10),
    )


def split_and_normalize(dataset: Dataset, fractions, seed=0):
    """Seeded shuffle, contiguous split, then centring with train-split means.

    The first fraction is the train split; its per-channel means are
    subtracted from every split.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("fractions must be non-negative and sum to 1")
    n = len(dataset)
    perm = SplitMix64(seed).spawn("split").permutation(n)
    bounds = np.round(np.cumsum([0.0] + fractions) * n).astype(int)
    bounds[-1] = n
    pieces = [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if any(len(p) == 0 for p in pieces):
        raise ConfigurationError("a split would be empty")
    mean = channel_means(dataset.images[pieces[0]])
    names = ["train", "test"] if len(pieces) == 2 else [f"split{i}" for i in range(len(pieces))]
    names[0] = "train"
    out = []
    for name, idx in zip(names, pieces):
        part = dataset.subset(idx, name)
        out.append(replace(part, images=part.images - mean))
    return out

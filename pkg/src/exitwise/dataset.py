"""CIFAR-10 binary ingestion, stratified splits and synthetic blob data."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CorruptRecordError, FormatError, ParameterError

CIFAR_SHAPE = (32, 32, 3)
CIFAR_CLASSES = 10
RECORD_BYTES = 1 + 32 * 32 * 3
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


class LabeledImage(NamedTuple):
    pixels: np.ndarray
    label: int


@dataclass
class Dataset:
    """Images stacked as ``N x H x W x C`` float32 in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ParameterError(
                f"images {self.images.shape} and labels {self.labels.shape} do not align"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ParameterError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, index, name=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.class_count,
                       name if name is not None else self.name)


def read_cifar10_batch(path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        raise FormatError(
            f"{path}: {raw.size} bytes is not a multiple of the {RECORD_BYTES}-byte record size"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise CorruptRecordError(
            f"{path}: record {bad[0]} has label byte {labels[bad[0]]} (> 9)"
        )
    # stored as R, G, B planes of 32x32, row-major
    planes = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = planes.astype(np.float32) / np.float32(255.0)
    return Dataset(images, labels, CIFAR_CLASSES, os.path.basename(str(path)))


def write_cifar10_batch(data: Dataset, path) -> None:
    """Write ``data`` in CIFAR-10 binary layout (pixels rounded to 8 bits)."""
    if data.image_shape != CIFAR_SHAPE:
        raise FormatError(f"CIFAR-10 layout needs 32x32x3 images, got {data.image_shape}")
    pixels = np.rint(np.clip(data.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    records = np.empty((len(data), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = data.labels
    records[:, 1:] = pixels.transpose(0, 3, 1, 2).reshape(len(data), -1)
    records.tofile(path)


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Load the five training batches and the test batch from ``directory``."""
    names = TRAIN_FILES + (TEST_FILE,)
    missing = [n for n in names if not os.path.isfile(os.path.join(directory, n))]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 directory {directory} lacks: {', '.join(missing)}")
    parts = [read_cifar10_batch(os.path.join(directory, n)) for n in TRAIN_FILES]
    train = Dataset(np.concatenate([p.images for p in parts]),
                    np.concatenate([p.labels for p in parts]), CIFAR_CLASSES, "cifar10-train")
    test = read_cifar10_batch(os.path.join(directory, TEST_FILE))
    test.name = "cifar10-test"
    return train, test


def split_validation(train: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded split into ``(train', val)``.

    The validation size is ``round(fraction * N)``. Each class contributes
    the floor of its proportional share; the remaining slots go to the
    classes with the largest fractional remainders, ties broken at random.
    """
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"validation fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    n = len(train)
    n_val = int(round(fraction * n))
    classes = np.arange(train.class_count)
    members = [rng.permutation(np.flatnonzero(train.labels == c)) for c in classes]
    exact = np.array([fraction * len(m) for m in members])
    take = np.floor(exact).astype(int)
    short = n_val - take.sum()
    if short > 0:
        remainder = exact - take
        order = np.lexsort((rng.random(len(classes)), -remainder))
        eligible = [c for c in order if take[c] < len(members[c])]
        for c in eligible[:short]:
            take[c] += 1
    val_idx = np.concatenate([m[:k] for m, k in zip(members, take)]).astype(np.int64)
    train_idx = np.concatenate([m[k:] for m, k in zip(members, take)]).astype(np.int64)
    val_idx.sort()
    train_idx.sort()
    return train.subset(train_idx), train.subset(val_idx, name=f"{train.name}-val")


def _smooth(u: np.ndarray, passes: int = 2) -> np.ndarray:
    # circular 3x3 box blur over axes 1, 2 of a K x H x W x C stack
    for _ in range(passes):
        u = sum(np.roll(u, (dy, dx), axis=(1, 2)) for dy in (-1, 0, 1) for dx in (-1, 0, 1)) / 9.0
    return u


def synthetic_blobs(n_per_class: int, class_count: int, image_shape, separation: float,
                    seed: int, noise: float = 0.1, jitter: int = 0, base: float = 0.5,
                    texture: float = 0.0, wavelength: float = 6.0,
                    spread: float = 0.0) -> Dataset:
    """Gaussian blobs around smooth random class templates.

    Templates sit at ``base + separation * noise / sqrt(2) * u_k`` with
    unit-norm directions ``u_k``, so two class centres are about
    ``separation`` noise standard deviations apart. ``jitter > 0`` rolls
    each sample's template by up to that many pixels in each spatial
    direction before adding noise. ``spread`` in [0, 1] scales each
    sample's template offset by a factor drawn from
    ``U(1 - spread, 1 + spread)``, mixing easy and hard samples.

    ``texture > 0`` adds a grating of that amplitude with a class-specific
    orientation (``pi * k / class_count``) and a random phase per sample.
    Averaged over phase the grating vanishes, so a linear read-out of the
    raw pixels cannot see it; telling neighbouring orientations apart
    needs receptive fields of about one ``wavelength``, which rewards
    depth. Pixels are clipped to [0, 1].
    """
    if separation < 0 or texture < 0:
        raise ParameterError("separation and texture must be non-negative")
    if wavelength <= 0:
        raise ParameterError("wavelength must be positive")
    if not 0.0 <= spread <= 1.0:
        raise ParameterError("spread must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    shape = tuple(image_shape)
    dirs = _smooth(rng.standard_normal((class_count,) + shape))
    dirs /= np.linalg.norm(dirs.reshape(class_count, -1), axis=1)[:, None, None, None]
    templates = base + separation * noise / np.sqrt(2.0) * dirs
    labels = np.repeat(np.arange(class_count), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    centres = templates[labels]
    if spread:
        scale = rng.uniform(1.0 - spread, 1.0 + spread, len(labels))
        centres = base + scale[:, None, None, None] * (centres - base)
    if jitter:
        shifts = rng.integers(-jitter, jitter + 1, size=(len(labels), 2))
        centres = np.stack([np.roll(c, tuple(s), axis=(0, 1)) for c, s in zip(centres, shifts)])
    if texture:
        theta = np.pi * labels / class_count
        phase = rng.uniform(0.0, 2.0 * np.pi, len(labels))
        yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
        arg = (np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy)
        grating = np.cos(2.0 * np.pi / wavelength * arg + phase[:, None, None])
        centres = centres + texture * grating[..., None]
    images = centres + noise * rng.standard_normal(centres.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    name = f"blobs-sep{separation:g}" + (f"-tex{texture:g}" if texture else "") + f"-seed{seed}"
    return Dataset(images, labels, class_count, name)

"""Synthetic dataset generators, CSV round-tripping, stratified splits.

All generation is a pure function of (parameters, seed); file output uses
17 significant digits so a save/load round trip reproduces every float
exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .linalg import Rng


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels) or len(self.labels) < 1:
            raise ValueError("inputs must be (n, d) with one label per row, n >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.d != self.test.d or self.train.num_classes != self.test.num_classes:
            raise ValueError("train/test shape mismatch")


def gen_spiral(n_per_class: int, num_classes: int, noise_sd: float, seed: int) -> Dataset:
    """Interleaved spiral arms in the plane.

    Arm c, sample i: t = i/(n_per_class-1), radius 0.1 + 0.9t, angle
    4*pi*t + 2*pi*c/num_classes, plus isotropic Gaussian noise.
    """
    if n_per_class < 1 or num_classes < 2:
        raise ValueError("need n_per_class >= 1 and num_classes >= 2")
    t = np.zeros(n_per_class) if n_per_class == 1 else np.arange(n_per_class) / (n_per_class - 1)
    rho = 0.1 + 0.9 * t
    points = []
    labels = []
    for c in range(num_classes):
        phi = 4.0 * np.pi * t + 2.0 * np.pi * c / num_classes
        points.append(np.column_stack([rho * np.cos(phi), rho * np.sin(phi)]))
        labels.append(np.full(n_per_class, c))
    inputs = np.vstack(points)
    if noise_sd > 0:
        noise = Rng(seed).with_stream("spiral").standard_normal(inputs.size).reshape(inputs.shape)
        inputs = inputs + noise_sd * noise
    return Dataset(inputs, np.concatenate(labels), num_classes)


def gen_blobs(n_per_class: int, centers, sd: float, seed: int) -> Dataset:
    """Gaussian clouds, one class per row of centers."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or len(centers) < 1 or n_per_class < 1:
        raise ValueError("centers must be (num_classes, d), n_per_class >= 1")
    num_classes, d = centers.shape
    noise = Rng(seed).with_stream("blobs").standard_normal(num_classes * n_per_class * d)
    noise = noise.reshape(num_classes, n_per_class, d)
    inputs = centers[:, None, :] + sd * noise
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(inputs.reshape(-1, d), labels, num_classes)


def split(ds: Dataset, test_fraction: float, seed: int) -> SplitDataset:
    """Stratified split: per class, round(test_fraction * count) rows to test.

    The rounded count is clamped to [1, count-1] so both sides stay
    nonempty; permutations come from the "split" stream of the seed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    gen = Rng(seed).with_stream("split").generator()
    train_idx = []
    test_idx = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < 2:
            raise ValueError("cannot stratify")
        k = int(np.floor(test_fraction * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        perm = idx[gen.permutation(len(idx))]
        test_idx.append(perm[:k])
        train_idx.append(perm[k:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return SplitDataset(
        Dataset(ds.inputs[train_idx], ds.labels[train_idx], ds.num_classes),
        Dataset(ds.inputs[test_idx], ds.labels[test_idx], ds.num_classes),
    )


def standardize(sd: SplitDataset) -> SplitDataset:
    """Per-feature standardization using train-split statistics only."""
    mean = sd.train.inputs.mean(axis=0)
    std = sd.train.inputs.std(axis=0)
    std[std == 0.0] = 1.0
    k = sd.train.num_classes
    return SplitDataset(
        Dataset((sd.train.inputs - mean) / std, sd.train.labels, k),
        Dataset((sd.test.inputs - mean) / std, sd.test.labels, k),
    )


def save_csv(ds: Dataset, path) -> None:
    """Write `x0,...,x{d-1},label` rows with round-trip-exact floats."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(ds.d)] + ["label"])
        for row, label in zip(ds.inputs, ds.labels):
            writer.writerow([format(v, ".17g") for v in row] + [str(int(label))])


def load_csv(path) -> Dataset:
    """Read a dataset written by save_csv; errors name the 1-based line."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file") from None
        if header[-1:] != ["label"]:
            raise ValueError("unknown header: last column must be 'label'")
        d = len(header) - 1
        if d < 1:
            raise ValueError("expected at least one feature")
        if header[:-1] != [f"x{j}" for j in range(d)]:
            raise ValueError("unknown header: feature columns must be x0..x{d-1}")

        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ValueError(f"line {lineno}: expected {d + 1} cells, got {len(row)}")
            try:
                values = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise ValueError(f"line {lineno}: malformed cell") from None
            if not all(np.isfinite(v) for v in values):
                raise ValueError(f"line {lineno}: non-finite value")
            if label < 0:
                raise ValueError(f"line {lineno}: negative label")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise ValueError("no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows), labels, int(labels.max()) + 1)

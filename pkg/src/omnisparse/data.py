"""Datasets: deterministic synthetic teacher task and CSV ingestion/export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError

MIN_CLASS_FRACTION = 0.05
_BALANCE_PROBE = 10_000
_MAX_TEACHER_TRIES = 100


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) == 0:
            raise ParameterError("dataset needs a nonempty [n, d] feature matrix")
        if self.labels.shape != (len(self.features),):
            raise ParameterError("one label per row required")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")
        if self.split not in ("train", "validation"):
            raise ParameterError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class SyntheticTeacher:
    """Hidden one-layer ReLU MLP whose argmax defines the labels."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def logits(self, x):
        h = np.maximum(x @ self.W1.T + self.b1, 0.0)
        return h @ self.W2.T + self.b2

    def predict(self, x):
        return self.logits(x).argmax(axis=1)


def synthetic_teacher(seed: int, d: int, num_classes: int, teacher_width: int) -> SyntheticTeacher:
    """Draw teachers until none of the classes covers < 5% of a probe sample."""
    probe = np.random.default_rng([seed, 1]).uniform(-1.0, 1.0, size=(_BALANCE_PROBE, d))
    for attempt in range(_MAX_TEACHER_TRIES):
        rng = np.random.default_rng([seed, 0, attempt])
        teacher = SyntheticTeacher(
            W1=rng.normal(size=(teacher_width, d)) / np.sqrt(d),
            b1=rng.normal(scale=0.1, size=teacher_width),
            W2=rng.normal(size=(num_classes, teacher_width)) / np.sqrt(teacher_width),
            b2=np.zeros(num_classes),
        )
        counts = np.bincount(teacher.predict(probe), minlength=num_classes)
        if counts.min() >= MIN_CLASS_FRACTION * _BALANCE_PROBE:
            return teacher
    raise ParameterError(f"no class-balanced teacher found in {_MAX_TEACHER_TRIES} draws")


def gen_synthetic(seed, n, d, num_classes, teacher_width=32, label_noise=0.0):
    """Return (train, validation) drawn from a hidden random teacher MLP.

    Inputs are uniform on [-1, 1]^d; with probability ``label_noise`` a label
    is replaced by a uniformly chosen different class. 90/10 split.
    """
    if min(n, d, num_classes, teacher_width) < 1 or num_classes < 2:
        raise ParameterError("n, d, teacher_width must be positive and classes >= 2")
    if not 0.0 <= label_noise < 0.5:
        raise ParameterError("label_noise must lie in [0, 0.5)")
    if n < 10:
        raise ParameterError("need n >= 10 for a 90/10 split")
    teacher = synthetic_teacher(seed, d, num_classes, teacher_width)
    rng = np.random.default_rng([seed, 2])
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    y = teacher.predict(x)
    flip = rng.random(n) < label_noise
    shift = rng.integers(1, num_classes, size=n)
    y = np.where(flip, (y + shift) % num_classes, y)
    n_val = n // 10
    n_train = n - n_val
    return (
        Dataset(x[:n_train], y[:n_train], num_classes, "train"),
        Dataset(x[n_train:], y[n_train:], num_classes, "validation"),
    )


def save_csv(dataset: Dataset, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, num_classes=None, split="train") -> Dataset:
    """Parse a ``f0,...,f{d-1},label`` file; errors carry the 1-based line."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise ParseError(f"header must be {','.join(expected) if d >= 1 else 'f0,...,label'}", line=1)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise ParseError("non-numeric cell", line=lineno) from None
            if not np.all(np.isfinite(vals)):
                raise ParseError("non-finite feature", line=lineno)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ParseError(f"label {label} out of range", line=lineno)
            feats.append(vals)
            labels.append(label)
    if not labels:
        raise ParseError("no data rows", line=2)
    if num_classes is None:
        num_classes = max(max(labels) + 1, 2)
    return Dataset(np.array(feats), np.array(labels), num_classes, split)

"""Datasets, the two-Gaussian synthetic task, label masks and CSV I/O.

CSV layout: header ``f1,...,fD,label``; the label column holds a 1-based
class index or is empty for an unlabeled row. In memory labels are 0-based
with ``-1`` for unlabeled.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CsvParseError
from .numerics import make_rng

TWO_GAUSSIAN_MEANS = np.array([[0.0, -0.5], [0.0, 0.5]])
TWO_GAUSSIAN_VARIANCE = 0.5


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ContractError("features must be (N, D) with one label entry per row")
        if np.any(self.labels < -1):
            raise ContractError("labels must be class indices >= 0 or -1 for unlabeled")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def n_labeled(self) -> int:
        return int(np.sum(self.labeled_mask))

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows].copy(), self.labels[rows].copy(), self.name)

    def labeled(self) -> "Dataset":
        return self.subset(self.labeled_mask)


@dataclass
class MaskRule:
    kind: str = "none"  # "none", "extremal_y" or "random_k_per_class"
    k: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "extremal_y", "random_k_per_class"):
            raise ContractError(f"unknown mask kind {self.kind!r}")
        if self.k < 0:
            raise ContractError("mask k must be >= 0")


def parse_mask(text: str, seed: int = 0) -> MaskRule:
    """``none``, ``extremal:K`` or ``random:K``."""
    if text == "none":
        return MaskRule()
    kind, _, k = text.partition(":")
    kinds = {"extremal": "extremal_y", "random": "random_k_per_class"}
    if kind not in kinds or not k.isdigit():
        raise ContractError(f"bad mask spec {text!r}; expected none, extremal:K or random:K")
    return MaskRule(kinds[kind], int(k), seed)


def _draw_two_gaussians(n, rng, variance):
    n0 = (n + 1) // 2
    counts = (n0, n - n0)
    chol = math.sqrt(variance)
    parts = [TWO_GAUSSIAN_MEANS[c] + chol * rng.standard_normal((counts[c], 2)) for c in (0, 1)]
    features = np.concatenate(parts) if n else np.empty((0, 2))
    labels = np.repeat([0, 1], counts)
    return features, labels


def gen_two_gaussians(n_train: int, n_test: int, seed: int, variance: float = TWO_GAUSSIAN_VARIANCE):
    """Two classes with means (0, -0.5) and (0, 0.5) and covariance ``variance * I``.

    Class 0 gets the extra sample when a count is odd. Returns fully labeled
    ``(train, test)``.
    """
    if n_train < 0 or n_test < 0:
        raise ContractError("sample counts must be >= 0")
    rng = make_rng(seed)
    train = Dataset(*_draw_two_gaussians(n_train, rng, variance), name="two_gaussians_train")
    test = Dataset(*_draw_two_gaussians(n_test, rng, variance), name="two_gaussians_test")
    return train, test


def apply_mask(dataset: Dataset, rule: MaskRule) -> Dataset:
    """Copy of ``dataset`` keeping only the labels selected by ``rule``.

    ``extremal_y`` keeps class 0's ``k`` highest and class 1's ``k`` lowest
    second coordinates, ties going to the lower sample index.
    """
    if np.any(dataset.labels < 0):
        raise ContractError("apply_mask needs a fully labeled dataset")
    out = Dataset(dataset.features.copy(), dataset.labels.copy(), dataset.name)
    if rule.kind == "none":
        return out
    keep = np.zeros(len(dataset), dtype=bool)
    classes = np.unique(dataset.labels)
    if rule.kind == "extremal_y":
        if dataset.dim < 2 or not set(classes.tolist()) <= {0, 1}:
            raise ContractError("extremal_y masking needs two classes and at least two features")
    rng = make_rng(rule.seed)
    for c in classes:
        rows = np.nonzero(dataset.labels == c)[0]
        if rule.k > len(rows):
            raise ContractError(f"k={rule.k} exceeds the {len(rows)} samples of class {c}")
        if rule.kind == "extremal_y":
            y = dataset.features[rows, 1]
            order = np.lexsort((rows, -y if c == 0 else y))
            chosen = rows[order[: rule.k]]
        else:
            chosen = rng.choice(rows, size=rule.k, replace=False)
        keep[chosen] = True
    out.labels[~keep] = -1
    return out


def _atomic_write(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write(path, buf.getvalue())


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_csv(dataset: Dataset, path):
    header = [f"f{i + 1}" for i in range(dataset.dim)] + ["label"]
    rows = (
        [fmt(v) for v in row] + ["" if y < 0 else str(int(y) + 1)]
        for row, y in zip(dataset.features, dataset.labels)
    )
    write_rows(path, header, rows)


def read_csv(path, name: str | None = None) -> Dataset:
    path = os.fspath(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label" or len(header) < 2:
            raise CsvParseError(path, 1, "header must be f1,...,fD,label")
        dim = len(header) - 1
        features, labels = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise CsvParseError(path, line, f"expected {dim + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:dim]]
            except ValueError:
                raise CsvParseError(path, line, "non-numeric feature value") from None
            if not all(math.isfinite(v) for v in values):
                raise CsvParseError(path, line, "non-finite feature value")
            cell = row[dim].strip()
            if cell == "":
                label = -1
            elif cell.isdigit() and int(cell) >= 1:
                label = int(cell) - 1
            else:
                raise CsvParseError(path, line, f"label must be a positive integer or empty, got {cell!r}")
            features.append(values)
            labels.append(label)
    feats = np.array(features, dtype=np.float64).reshape(len(features), dim)
    return Dataset(feats, np.array(labels, dtype=np.int64), name or os.path.basename(path))

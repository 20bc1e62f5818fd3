"""Expected calibration error, reliability bins and confidence histograms.

Bins are equal-width half-open intervals ``((m-1)/M, m/M]`` for
``m = 1..M``; a confidence of exactly 0 is counted in the first bin so the
bin counts always add up to the number of records.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .data import fmt, write_rows
from .errors import ContractError, CsvParseError

DEFAULT_BINS = 10


@dataclass(frozen=True)
class PredictionRecord:
    confidence: float
    predicted: int
    true: int


@dataclass
class Predictions:
    """Column form of a list of records; labels are 0-based."""

    confidence: np.ndarray
    predicted: np.ndarray
    true: np.ndarray

    def __post_init__(self):
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        self.predicted = np.asarray(self.predicted, dtype=np.int64).reshape(-1)
        self.true = np.asarray(self.true, dtype=np.int64).reshape(-1)
        n = len(self.confidence)
        if len(self.predicted) != n or len(self.true) != n:
            raise ContractError("confidence, predicted and true must have equal length")
        if np.any(~np.isfinite(self.confidence)) or np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ContractError("confidences must lie in [0, 1]")

    def __len__(self):
        return len(self.confidence)

    @property
    def correct(self) -> np.ndarray:
        return self.predicted == self.true

    @classmethod
    def from_records(cls, records) -> "Predictions":
        records = list(records)
        return cls(
            [r.confidence for r in records],
            [r.predicted for r in records],
            [r.true for r in records],
        )

    @classmethod
    def from_posteriors(cls, posteriors, labels) -> "Predictions":
        """Confidence is the largest posterior component; ties pick the lower class."""
        posteriors = np.asarray(posteriors, dtype=np.float64)
        pred = np.argmax(posteriors, axis=1)
        return cls(posteriors[np.arange(len(pred)), pred], pred, labels)


@dataclass
class CalibrationReport:
    n_bins: int
    counts: np.ndarray
    accuracy: np.ndarray  # per bin, 0 where empty
    confidence: np.ndarray  # per bin, 0 where empty
    ece: float
    overall_accuracy: float
    mean_confidence: float

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _as_predictions(records) -> Predictions:
    return records if isinstance(records, Predictions) else Predictions.from_records(records)


def bin_index(confidence, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence under ``((m-1)/M, m/M]`` binning.

    Edges are the doubles nearest ``m/M``, so a confidence written as ``0.1``
    sits on the first edge for ``M = 10``.
    """
    if n_bins < 1:
        raise ContractError("need at least one bin")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, confidence, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


def ece(records, n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    preds = _as_predictions(records)
    if len(preds) == 0:
        raise ContractError("ECE of an empty record set")
    idx = bin_index(preds.confidence, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    hits = np.bincount(idx, weights=preds.correct.astype(np.float64), minlength=n_bins)
    # |B_m| * |acc - conf| = |hits - sum of confidences|; fsum keeps each bin's
    # gap correctly rounded so hand-sized examples come out exact
    order = np.argsort(idx, kind="stable")
    groups = np.split(preds.confidence[order], np.cumsum(counts)[:-1])
    conf_sum = np.array([math.fsum(g) for g in groups])
    gaps = [abs(math.fsum([h, *(-g)])) for h, g in zip(hits, groups)]
    safe = np.maximum(counts, 1)
    acc = np.where(counts > 0, hits / safe, 0.0)
    conf = np.where(counts > 0, conf_sum / safe, 0.0)
    n = len(preds)
    value = math.fsum(gaps) / n
    return CalibrationReport(
        n_bins,
        counts,
        acc,
        conf,
        value,
        float(np.mean(preds.correct)),
        float(np.mean(preds.confidence)),
    )


def reliability_bins(records, n_bins: int = DEFAULT_BINS):
    """Rows ``(center, accuracy, confidence, gap, count)`` per bin, empty bins included."""
    rep = ece(records, n_bins)
    centers = (np.arange(n_bins) + 0.5) / n_bins
    gap = np.abs(rep.accuracy - rep.confidence)
    return [
        (float(centers[m]), float(rep.accuracy[m]), float(rep.confidence[m]), float(gap[m]), int(rep.counts[m]))
        for m in range(n_bins)
    ]


def confidence_histogram(records, n_bins: int = DEFAULT_BINS):
    """Bin counts and the mean of all confidences."""
    preds = _as_predictions(records)
    if len(preds) == 0:
        raise ContractError("histogram of an empty record set")
    counts = np.bincount(bin_index(preds.confidence, n_bins), minlength=n_bins)
    return counts, float(np.mean(preds.confidence))


def write_predictions(preds: Predictions, path):
    rows = ([fmt(c), str(p + 1), str(t + 1)] for c, p, t in zip(preds.confidence, preds.predicted, preds.true))
    write_rows(path, ["confidence", "predicted", "true"], rows)


def read_predictions(path) -> Predictions:
    """Parse a ``confidence,predicted,true`` CSV (1-based class labels)."""
    path = os.fspath(path)
    conf, pred, true = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["confidence", "predicted", "true"]:
            raise CsvParseError(path, 1, "header must be confidence,predicted,true")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CsvParseError(path, line, f"expected 3 fields, got {len(row)}")
            try:
                c = float(row[0])
            except ValueError:
                raise CsvParseError(path, line, "non-numeric confidence") from None
            if not 0.0 <= c <= 1.0:
                raise CsvParseError(path, line, f"confidence {c} outside [0, 1]")
            labels = []
            for cell in row[1:]:
                cell = cell.strip()
                if not (cell.isdigit() and int(cell) >= 1):
                    raise CsvParseError(path, line, f"class label must be a positive integer, got {cell!r}")
                labels.append(int(cell) - 1)
            conf.append(c)
            pred.append(labels[0])
            true.append(labels[1])
    return Predictions(conf, pred, true)


def write_report(report: CalibrationReport, records, out_dir):
    """``ece.csv``, ``reliability.csv`` and ``histogram.csv`` under ``out_dir``."""
    n_bins = report.n_bins
    write_rows(
        os.path.join(out_dir, "ece.csv"),
        ["n_bins", "n", "ece", "accuracy", "mean_confidence"],
        [[n_bins, report.n, fmt(report.ece), fmt(report.overall_accuracy), fmt(report.mean_confidence)]],
    )
    write_rows(
        os.path.join(out_dir, "reliability.csv"),
        ["bin_center", "accuracy", "confidence", "gap", "count"],
        ([fmt(c), fmt(a), fmt(f), fmt(g), k] for c, a, f, g, k in reliability_bins(records, n_bins)),
    )
    counts, mean = confidence_histogram(records, n_bins)
    lows = np.arange(n_bins) / n_bins
    write_rows(
        os.path.join(out_dir, "histogram.csv"),
        ["bin_low", "bin_high", "count", "mean_confidence"],
        ([fmt(lo), fmt(lo + 1.0 / n_bins), int(k), fmt(mean)] for lo, k in zip(lows, counts)),
    )

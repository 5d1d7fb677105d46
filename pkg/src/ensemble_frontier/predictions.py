"""Prediction dumps and label sets: loading, validation, serialization, scoring.

Dump format (CSV, UTF-8)::

    example_id,label,p_0,...,p_{C-1}

``label`` is ``-1`` when the dump carries no ground truth; a separate label
file ``example_id,label`` is then needed for scoring.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import (
    DataFormatError,
    EmptyDump,
    MalformedRow,
    NegativeProbability,
    RowSumOutOfTolerance,
    ShapeMismatch,
)

__all__ = [
    "PredictionSet",
    "LabelSet",
    "DumpContents",
    "INGEST_SUM_TOL",
    "VALID_SUM_TOL",
    "read_prediction_dump",
    "load_prediction_dump",
    "save_prediction_dump",
    "load_label_set",
    "save_label_set",
    "top1_accuracy",
    "error_rate",
]

INGEST_SUM_TOL = 1e-4
VALID_SUM_TOL = 1e-6
_EXACT_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """One model's class-probability rows over a fixed, ordered example set."""

    model_id: str
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ShapeMismatch(f"probs must be 2-D, got shape {probs.shape}")
        n, c = probs.shape
        if n < 1:
            raise ShapeMismatch("a PredictionSet needs at least one example")
        if c < 2:
            raise ShapeMismatch(f"a PredictionSet needs at least two classes, got {c}")
        if not np.all(np.isfinite(probs)):
            raise DataFormatError(f"{self.model_id}: non-finite probability")
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise DataFormatError(f"{self.model_id}: probabilities outside [0, 1]")
        worst = np.abs(probs.sum(axis=1) - 1.0).max()
        if worst > VALID_SUM_TOL:
            raise RowSumOutOfTolerance(
                f"{self.model_id}: row sum off by {worst:.3g} (> {VALID_SUM_TOL})"
            )
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def num_examples(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def predictions(self) -> np.ndarray:
        # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
        return np.argmax(self.probs, axis=1)

    def with_id(self, model_id: str) -> "PredictionSet":
        return PredictionSet(model_id, self.probs)


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray
    example_ids: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1:
            raise ShapeMismatch("labels must be a non-empty 1-D sequence")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DataFormatError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise DataFormatError("labels must be non-negative class indices")
        if self.example_ids is not None and len(self.example_ids) != labels.size:
            raise ShapeMismatch("example_ids and labels differ in length")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def num_examples(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True, eq=False)
class DumpContents:
    predictions: PredictionSet
    example_ids: tuple[str, ...]
    labels: LabelSet | None


def _check_compatible(preds: PredictionSet, labels: LabelSet) -> None:
    if preds.num_examples != labels.num_examples:
        raise ShapeMismatch(
            f"{preds.model_id}: {preds.num_examples} prediction rows vs "
            f"{labels.num_examples} labels"
        )
    if labels.labels.max() >= preds.num_classes:
        raise ShapeMismatch(
            f"label {labels.labels.max()} out of range for {preds.num_classes} classes"
        )


def top1_accuracy(preds: PredictionSet, labels: LabelSet) -> float:
    """Fraction of rows whose argmax equals the label (ties to the lowest class)."""
    _check_compatible(preds, labels)
    correct = int(np.count_nonzero(preds.predictions() == labels.labels))
    return correct / preds.num_examples


def error_rate(preds: PredictionSet, labels: LabelSet) -> float:
    _check_compatible(preds, labels)
    wrong = int(np.count_nonzero(preds.predictions() != labels.labels))
    return wrong / preds.num_examples


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise MalformedRow(f"{where}: non-finite value {text!r}")
    return value


def read_prediction_dump(path, model_id: str | None = None) -> DumpContents:
    path = Path(path)
    model_id = model_id if model_id is not None else path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyDump(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 4 or header[:2] != ["example_id", "label"]:
        raise MalformedRow(f"{path}: header must start with 'example_id,label,p_0,p_1'")
    expected = [f"p_{c}" for c in range(len(header) - 2)]
    if header[2:] != expected:
        raise MalformedRow(f"{path}: probability columns must be named p_0..p_{len(expected) - 1}")
    body = rows[1:]
    if not body:
        raise EmptyDump(f"{path}: header but no rows")

    width = len(header)
    ids: list[str] = []
    raw_labels: list[int] = []
    probs = np.empty((len(body), width - 2), dtype=np.float64)
    for i, row in enumerate(body):
        where = f"{path}:{i + 2}"
        if len(row) != width:
            raise MalformedRow(f"{where}: expected {width} fields, got {len(row)}")
        ids.append(row[0])
        try:
            raw_labels.append(int(row[1]))
        except ValueError:
            raise MalformedRow(f"{where}: bad label {row[1]!r}") from None
        probs[i] = [_parse_float(v, where) for v in row[2:]]

    if probs.min() < 0.0:
        i = int(np.argwhere(probs < 0.0)[0, 0])
        raise NegativeProbability(f"{path}:{i + 2}: negative probability")
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > INGEST_SUM_TOL
    if bad.any():
        i = int(np.argmax(bad))
        raise RowSumOutOfTolerance(
            f"{path}:{i + 2}: row sums to {sums[i]!r}, outside 1 +/- {INGEST_SUM_TOL}"
        )
    # Rows already within float rounding of 1 keep their exact bits, so a
    # save/load cycle is lossless.
    off = np.abs(sums - 1.0) > _EXACT_SUM_TOL
    if off.any():
        probs[off] /= sums[off, None]

    label_arr = np.asarray(raw_labels, dtype=np.int64)
    if np.all(label_arr == -1):
        labels = None
    elif np.any(label_arr < 0):
        raise MalformedRow(f"{path}: labels must be all -1 or all non-negative")
    else:
        labels = LabelSet(label_arr, tuple(ids))
    preds = PredictionSet(model_id, probs)
    if labels is not None:
        _check_compatible(preds, labels)
    return DumpContents(preds, tuple(ids), labels)


def load_prediction_dump(path, model_id: str | None = None) -> PredictionSet:
    return read_prediction_dump(path, model_id).predictions


def save_prediction_dump(path, preds: PredictionSet, labels: LabelSet | None = None,
                         example_ids=None) -> Path:
    if labels is not None:
        _check_compatible(preds, labels)
    if example_ids is None:
        example_ids = labels.example_ids if labels is not None and labels.example_ids else None
    if example_ids is None:
        example_ids = [str(i) for i in range(preds.num_examples)]
    label_col = labels.labels.tolist() if labels is not None else [-1] * preds.num_examples
    header = "example_id,label," + ",".join(f"p_{c}" for c in range(preds.num_classes))
    lines = [header]
    for eid, lab, row in zip(example_ids, label_col, preds.probs.tolist()):
        lines.append(f"{eid},{lab}," + ",".join(map(repr, row)))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_label_set(path) -> LabelSet:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyDump(f"{path}: empty label file")
    if [h.strip() for h in rows[0]] != ["example_id", "label"]:
        raise MalformedRow(f"{path}: header must be 'example_id,label'")
    if len(rows) < 2:
        raise EmptyDump(f"{path}: header but no rows")
    ids, labels = [], []
    for i, row in enumerate(rows[1:]):
        if len(row) != 2:
            raise MalformedRow(f"{path}:{i + 2}: expected 2 fields, got {len(row)}")
        ids.append(row[0])
        try:
            labels.append(int(row[1]))
        except ValueError:
            raise MalformedRow(f"{path}:{i + 2}: bad label {row[1]!r}") from None
    return LabelSet(np.asarray(labels, dtype=np.int64), tuple(ids))


def save_label_set(path, labels: LabelSet) -> Path:
    ids = labels.example_ids or [str(i) for i in range(labels.num_examples)]
    lines = ["example_id,label"]
    lines.extend(f"{eid},{lab}" for eid, lab in zip(ids, labels.labels.tolist()))
    return atomic_write_text(path, "\n".join(lines) + "\n")

"""Hard-voting committees, one-vs-one multiclass prediction, and metrics."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .data import NormalizationMap, apply_normalization
from .errors import ConfigurationError, DimensionError, DomainError
from .propagation import PsbcModel, predict_batch


@dataclass(frozen=True)
class Committee:
    """Binary classifiers for one digit pair, sharing its normalization map."""

    members: tuple[PsbcModel, ...]
    pair: tuple[int, int]
    normalization: NormalizationMap

    def __post_init__(self):
        a, b = self.pair
        if not a < b:
            raise ConfigurationError(f"pair must be ordered, got {self.pair}")
        object.__setattr__(self, "members", tuple(self.members))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (k, k) int64, rows = true label, cols = predicted

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError("confusion matrix must be square")
        if (c < 0).any():
            raise DomainError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)


def hard_vote(committee: Committee, x: np.ndarray) -> int:
    """Unweighted majority of member predictions; exact ties go to 1.

    Expects x already normalized by the committee's map.
    """
    if not committee.members:
        raise DomainError("committee has no members")
    votes = sum(int(predict_batch(m, x[None, :])[0]) for m in committee.members)
    return int(2 * votes >= len(committee.members))


def _hard_vote_batch(committee: Committee, xs: np.ndarray) -> np.ndarray:
    votes = sum(predict_batch(m, xs) for m in committee.members)
    return (2 * votes >= len(committee.members)).astype(np.int64)


def ovo_predict(committees, x: np.ndarray, rng: np.random.Generator) -> int:
    """One-vs-one vote count over every digit pair; seeded uniform tie-break.

    ``x`` is the min-max scaled input; each pair's own normalization map is
    applied before that pair's committee votes.
    """
    return int(ovo_predict_batch(committees, np.asarray(x)[None, :], rng)[0])


def ovo_predict_batch(committees, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized one-vs-one prediction over rows of xs."""
    by_pair = {c.pair: c for c in committees}
    digits = sorted({d for pair in by_pair for d in pair})
    expected = {(a, b) for i, a in enumerate(digits) for b in digits[i + 1 :]}
    missing = expected - set(by_pair)
    if missing or not by_pair:
        raise ConfigurationError(f"missing committees for pairs {sorted(missing)}")
    xs = np.asarray(xs, dtype=np.float64)
    scores = np.zeros((xs.shape[0], len(digits)))
    index = {d: i for i, d in enumerate(digits)}
    for (a, b), committee in sorted(by_pair.items()):
        votes = _hard_vote_batch(committee, apply_normalization(committee.normalization, xs))
        scores[:, index[a]] += 1 - votes
        scores[:, index[b]] += votes
    out = np.empty(xs.shape[0], dtype=np.int64)
    digit_array = np.array(digits)
    for i in range(xs.shape[0]):
        top = np.flatnonzero(scores[i] == scores[i].max())
        out[i] = digit_array[top[rng.integers(top.size)]]
    return out


def confusion(preds, labels, n_classes: int | None = None) -> ConfusionMatrix:
    """Counts of (true label, predicted label) pairs."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise DimensionError("predictions and labels must have equal length")
    if n_classes is None:
        n_classes = max(2, int(max(preds.max(initial=0), labels.max(initial=0))) + 1)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> tuple[float, float | None]:
    """(accuracy, F1).  F1 treats label 1 as positive; None for multiclass."""
    counts = cm.counts
    total = counts.sum()
    accuracy = float(np.trace(counts) / total) if total else 0.0
    if counts.shape[0] != 2:
        return accuracy, None
    tp = counts[1, 1]
    fp = counts[0, 1]
    fn = counts[1, 0]
    denom = 2 * tp + fp + fn
    f1 = float(2 * tp / denom) if denom else 0.0
    return accuracy, f1


def write_confusion_csv(cm: ConfusionMatrix, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in cm.counts:
                writer.writerow([int(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_multiclass_report(pair_accuracies: dict, overall_accuracy: float) -> str:
    """Structured text: one line per pair accuracy plus the overall figure."""
    lines = ["multiclass-report 1"]
    for (a, b) in sorted(pair_accuracies):
        lines.append(f"pair {a},{b} accuracy {pair_accuracies[(a, b)]:.17g}")
    lines.append(f"overall accuracy {overall_accuracy:.17g}")
    return "\n".join(lines) + "\n"

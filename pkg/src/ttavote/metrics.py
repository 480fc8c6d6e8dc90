"""Evaluation and calibration measures.

Character error rate and field accuracy are computed on normalized text
(case-folded, punctuation and whitespace stripped). Calibration of the
agreement-based confidence scores is assessed with ECE, ACE, and the
Brier score, and recalibrated with isotonic regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import normalize_text


class MetricError(ValueError):
    """Metric preconditions violated (empty truth, constant vector, ...)."""


@dataclass(frozen=True)
class EvalOutcome:
    """Evaluation of one predicted field against its ground truth."""

    record_id: str
    field_name: str
    predicted: str | None
    truth: str
    exact_match: bool
    cer: float
    confidence: float
    unanimous: bool


def evaluate_field(
    record_id: str,
    field_name: str,
    predicted: str | None,
    truth: str,
    confidence: float,
    unanimous: bool,
) -> EvalOutcome:
    """Build an EvalOutcome, deriving exact match and CER consistently."""
    if not normalize_text(truth):
        raise MetricError(f"{record_id}/{field_name}: empty normalized truth")
    match = predicted is not None and normalize_text(predicted) == normalize_text(truth)
    return EvalOutcome(
        record_id=record_id,
        field_name=field_name,
        predicted=predicted,
        truth=truth,
        exact_match=match,
        cer=cer(predicted, truth),
        confidence=confidence,
        unanimous=unanimous,
    )


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit substitution/insert/delete costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


def cer(pred: str | None, truth: str) -> float:
    """Levenshtein distance over normalized text, divided by truth length.

    An absent prediction counts as a full-length error (CER 1.0). May
    exceed 1.0 for long wrong predictions.
    """
    t = normalize_text(truth)
    if not t:
        raise MetricError("CER undefined for empty normalized truth")
    if pred is None:
        return 1.0
    return levenshtein(normalize_text(pred), t) / len(t)


def field_accuracy(outcomes: list[EvalOutcome]) -> float:
    """Percentage of outcomes whose normalized prediction equals the truth."""
    if not outcomes:
        raise MetricError("field_accuracy requires a non-empty outcome list")
    hits = sum(
        1
        for o in outcomes
        if o.predicted is not None and normalize_text(o.predicted) == normalize_text(o.truth)
    )
    return 100.0 * hits / len(outcomes)


def error_correlation(errs_a, errs_b) -> float:
    """Sample Pearson correlation of two binary error vectors."""
    a = np.asarray(errs_a, dtype=float)
    b = np.asarray(errs_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise MetricError("error vectors must be equal-length 1-D with n >= 2")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise MetricError("error correlation undefined for a constant vector")
    da = a - a.mean()
    db = b - b.mean()
    return float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))


def _check_calibration_inputs(confs, outcomes) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(confs, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if c.shape != y.shape or c.ndim != 1 or len(c) < 1:
        raise MetricError("confidences and outcomes must be equal-length, non-empty 1-D")
    if np.any((c < 0) | (c > 1)):
        raise MetricError("confidences must lie in [0, 1]")
    return c, y


def ece(confs, outcomes, n_bins: int = 10) -> float:
    """Expected calibration error with equal-width bins over [0, 1]."""
    c, y = _check_calibration_inputs(confs, outcomes)
    if n_bins < 1:
        raise MetricError("n_bins must be >= 1")
    idx = np.minimum((c * n_bins).astype(int), n_bins - 1)
    total = 0.0
    n = len(c)
    for b in range(n_bins):
        mask = idx == b
        k = int(mask.sum())
        if k == 0:
            continue
        total += (k / n) * abs(float(y[mask].mean()) - float(c[mask].mean()))
    return total


def ace(confs, outcomes, n_bins: int = 10) -> float:
    """Adaptive calibration error with equal-mass (quantile) bins."""
    c, y = _check_calibration_inputs(confs, outcomes)
    if n_bins < 1:
        raise MetricError("n_bins must be >= 1")
    order = np.argsort(c, kind="stable")
    groups = np.array_split(order, n_bins)
    total = 0.0
    n = len(c)
    for g in groups:
        if len(g) == 0:
            continue
        total += (len(g) / n) * abs(float(y[g].mean()) - float(c[g].mean()))
    return total


def brier(confs, outcomes) -> float:
    """Mean squared difference between confidence and binary outcome."""
    c, y = _check_calibration_inputs(confs, outcomes)
    return float(np.mean((c - y) ** 2))


@dataclass(frozen=True)
class CalibrationMap:
    """Monotone confidence remapping fit by isotonic regression."""

    breakpoints: tuple[float, ...]  # ascending distinct confidences
    fitted: tuple[float, ...]  # nondecreasing values in [0, 1]

    def apply(self, confs) -> np.ndarray:
        """Interpolate linearly; clamp to the nearest end value outside."""
        return np.interp(np.asarray(confs, dtype=float), self.breakpoints, self.fitted)

    def apply_one(self, conf: float) -> float:
        return float(self.apply([conf])[0])


def isotonic_fit(confs, outcomes) -> CalibrationMap:
    """Pool-adjacent-violators fit of outcome rate as a function of confidence."""
    c, y = _check_calibration_inputs(confs, outcomes)
    order = np.argsort(c, kind="stable")
    c, y = c[order], y[order]

    # Collapse duplicate confidences so the fit is a function of confidence.
    uniq, start = np.unique(c, return_index=True)
    counts = np.diff(np.append(start, len(c)))
    means = np.add.reduceat(y, start) / counts

    weights = [int(k) for k in counts]
    # PAVA: merge adjacent blocks while any block mean decreases.
    blocks: list[list] = []  # [value, weight]
    for v, w in zip(means, weights):
        blocks.append([float(v), w])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v1, w1 = blocks.pop()
            v0, w0 = blocks.pop()
            blocks.append([(v0 * w0 + v1 * w1) / (w0 + w1), w0 + w1])

    fitted: list[float] = []
    i = 0
    for v, w in blocks:
        span = 0
        while span < w:
            span += weights[i]
            fitted.append(v)
            i += 1
    return CalibrationMap(breakpoints=tuple(float(p) for p in uniq), fitted=tuple(fitted))


def unanimous_precision_recall(
    outcomes: list[EvalOutcome],
) -> tuple[float | None, float | None, float | None]:
    """Precision/recall/F1 treating a unanimous prediction as a positive.

    Undefined components (no unanimous fields, no correct fields) are
    returned as None rather than 0.
    """
    if not outcomes:
        raise MetricError("unanimous_precision_recall requires outcomes")
    n_unanimous = sum(1 for o in outcomes if o.unanimous)
    n_correct = sum(1 for o in outcomes if o.exact_match)
    tp = sum(1 for o in outcomes if o.unanimous and o.exact_match)
    precision = tp / n_unanimous if n_unanimous else None
    recall = tp / n_correct if n_correct else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def confidence_outcome_correlation(confs, outcomes) -> float:
    """Pearson correlation between confidence scores and correctness."""
    return error_correlation(confs, outcomes)


def calibration_curve(confs, outcomes, n_bins: int = 10) -> list[tuple[float, float, float, int]]:
    """(bin_center, mean confidence, accuracy, count) rows for plotting."""
    c, y = _check_calibration_inputs(confs, outcomes)
    idx = np.minimum((c * n_bins).astype(int), n_bins - 1)
    rows = []
    for b in range(n_bins):
        mask = idx == b
        k = int(mask.sum())
        center = (b + 0.5) / n_bins
        if k == 0:
            rows.append((center, float("nan"), float("nan"), 0))
        else:
            rows.append((center, float(c[mask].mean()), float(y[mask].mean()), k))
    return rows

"""Classification metrics and operating-point selection.

Predictions are positive iff ``score >= threshold``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError

CSV_COLUMNS = ("rate", "pathology", "model_kind", "auroc", "sens", "spec", "npv", "ppv", "seed")


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    return scores, labels


def auroc(scores, labels):
    """Mann-Whitney AUROC with midranks for ties."""
    scores, labels = _split(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def choose_operating_point(scores, labels, target_sensitivity=0.85):
    """Largest threshold whose sensitivity on these scores is >= target."""
    scores, labels = _split(scores, labels)
    pos = np.sort(scores[labels])[::-1]
    if pos.size == 0:
        raise UndefinedMetricError("operating point needs at least one positive")
    if target_sensitivity > 1:
        return float(scores.min())
    # smallest count k with k / n_pos >= target, compared exactly as sensitivity is computed
    needed = int(np.searchsorted(np.arange(pos.size + 1) / pos.size, target_sensitivity, side="left"))
    if needed <= 0:
        return float(scores.max())
    return float(pos[needed - 1])


@dataclass
class ConfusionMetrics:
    threshold: float
    sensitivity: float | None
    specificity: float | None
    npv: float | None
    ppv: float | None
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self):
        return asdict(self)


def _ratio(num, den):
    return num / den if den else None


def confusion_metrics(scores, labels, threshold):
    scores, labels = _split(scores, labels)
    if scores.size == 0:
        raise ValueError("confusion metrics need at least one prediction")
    predicted = scores >= threshold
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    tn = int(np.sum(~predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    return ConfusionMetrics(float(threshold), _ratio(tp, tp + fn), _ratio(tn, tn + fp),
                            _ratio(tn, tn + fn), _ratio(tp, tp + fp), tp, fp, tn, fn)


def binary_cross_entropy(probs, labels):
    """Mean -[y log p + (1-y) log(1-p)] over every entry."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def pathology_report(val_scores, val_labels, test_scores, test_labels, target_sensitivity=0.85):
    """AUROC on test plus confusion metrics at the validation operating point."""
    threshold = choose_operating_point(val_scores, val_labels, target_sensitivity)
    cm = confusion_metrics(test_scores, test_labels, threshold)
    try:
        test_auc = auroc(test_scores, test_labels)
    except UndefinedMetricError:
        test_auc = None
    return {"auroc": test_auc, **cm.to_dict()}


def _columns(a):
    a = np.asarray(a)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def metric_report(val_probs, val_labels, test_probs, test_labels, pathologies, target_sensitivity=0.85):
    """MetricReport as a plain dict keyed by pathology name."""
    val_probs, val_labels, test_probs, test_labels = (
        _columns(a) for a in (val_probs, val_labels, test_probs, test_labels))
    return {name: pathology_report(val_probs[:, i], val_labels[:, i], test_probs[:, i],
                                   test_labels[:, i], target_sensitivity)
            for i, name in enumerate(pathologies)}


def bootstrap_auroc(scores, labels, n_resamples, rng):
    """Mean and std of AUROC over seeded resamples (single-class resamples skipped)."""
    scores, labels = _split(scores, labels)
    values = []
    for _ in range(n_resamples):
        idx = rng.integers(0, scores.size, scores.size)
        try:
            values.append(auroc(scores[idx], labels[idx]))
        except UndefinedMetricError:
            continue
    return float(np.mean(values)), float(np.std(values))


def write_sweep_csv(path, rows):
    """Write sweep rows (dicts with CSV_COLUMNS keys); ``None`` becomes an empty cell."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else _fmt(row.get(k))) for k in CSV_COLUMNS})


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

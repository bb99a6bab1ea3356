"""Classification and ranking metrics: accuracy, top-k, MAP, MAUC, lwlrap.

Tie conventions (fixed so every number is reproducible):

* accuracy / top-k: among equal scores the lower class index ranks higher.
* AP: items with equal scores are ranked by ascending item index.
* lwlrap: classes with equal scores are ranked by ascending class index.
* AUC: a positive/negative tie counts one half.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidK, ShapeError


@dataclass
class ScoreTable:
    scores: np.ndarray  # N x C
    truths: np.ndarray  # N x C, binary
    class_names: list = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truths = np.asarray(self.truths)
        if self.scores.ndim != 2 or self.scores.shape != self.truths.shape:
            raise ShapeError(f"scores {self.scores.shape} and truths {self.truths.shape} must be equal N x C")
        if not np.all((self.truths == 0) | (self.truths == 1)):
            raise ShapeError("truths must be binary")
        if not np.all(np.isfinite(self.scores)):
            raise ShapeError("scores must be finite")
        self.truths = self.truths.astype(np.int8)
        if self.class_names is None:
            self.class_names = [str(c) for c in range(self.scores.shape[1])]
        if len(self.class_names) != self.scores.shape[1]:
            raise ShapeError("one class name per column required")

    @property
    def n_items(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    @classmethod
    def from_labels(cls, scores, labels, class_names=None):
        """Build from integer class labels (single-label tasks)."""
        scores = np.asarray(scores, dtype=np.float64)
        truths = np.zeros(scores.shape, dtype=np.int8)
        truths[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1
        return cls(scores, truths, class_names)


def _true_class(t: ScoreTable) -> np.ndarray:
    if not np.all(t.truths.sum(axis=1) == 1):
        raise ShapeError("accuracy needs exactly one true class per row")
    return np.argmax(t.truths, axis=1)


def _rank_of(scores: np.ndarray, cls: np.ndarray) -> np.ndarray:
    """0-based rank of column ``cls[i]`` in row i, ties to the lower index."""
    own = scores[np.arange(len(cls)), cls][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    above = (scores > own) | ((scores == own) & (idx < cls[:, None]))
    return above.sum(axis=1)


def accuracy(t: ScoreTable) -> float:
    truth = _true_class(t)
    return float(np.mean(np.argmax(t.scores, axis=1) == truth)) if t.n_items else math.nan


def top_k_accuracy(t: ScoreTable, k: int) -> float:
    if not 1 <= k <= t.n_classes:
        raise InvalidK(f"k={k} outside 1..{t.n_classes}")
    truth = _true_class(t)
    return float(np.mean(_rank_of(t.scores, truth) < k)) if t.n_items else math.nan


def average_precision(scores, truths) -> float:
    """Mean over positives of precision at the positive's rank; nan without positives."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    n_pos = int(truths.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-scores, kind="stable")
    hits = truths[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    return float(np.sum(cum[hits] / ranks[hits]) / n_pos)


def per_class_average_precision(t: ScoreTable) -> np.ndarray:
    return np.array([average_precision(t.scores[:, c], t.truths[:, c]) for c in range(t.n_classes)])


def mean_average_precision(t: ScoreTable) -> float:
    """Mean AP over classes that have at least one positive."""
    return _nanmean(per_class_average_precision(t))


def roc_auc(scores, truths) -> float:
    """Mann-Whitney AUC via mid-ranks; nan unless both classes are present."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    n_pos = int(truths.sum())
    n_neg = len(truths) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    u = ranks[truths].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def per_class_auc(t: ScoreTable) -> np.ndarray:
    return np.array([roc_auc(t.scores[:, c], t.truths[:, c]) for c in range(t.n_classes)])


def mauc(t: ScoreTable) -> float:
    return _nanmean(per_class_auc(t))


def lwlrap_per_class(t: ScoreTable):
    """Per-class label-ranking precision sums and label counts."""
    order = np.argsort(-t.scores, axis=1, kind="stable")
    hits = np.take_along_axis(t.truths, order, axis=1).astype(bool)
    cum = np.cumsum(hits, axis=1)
    ranks = np.arange(1, t.n_classes + 1)[None, :]
    prec = np.where(hits, cum / ranks, 0.0)
    sums = np.zeros(t.n_classes)
    np.add.at(sums, order, prec)
    return sums, t.truths.sum(axis=0)


def lwlrap(t: ScoreTable) -> float:
    """Label-weighted label-ranking average precision over all (item, true label) pairs."""
    sums, counts = lwlrap_per_class(t)
    total = counts.sum()
    return float(sums.sum() / total) if total else math.nan


def _nanmean(values) -> float:
    ok = values[~np.isnan(values)]
    # fixed left-to-right reduction
    return float(math.fsum(ok) / len(ok)) if len(ok) else math.nan


# --- reports ----------------------------------------------------------------


@dataclass
class MetricReport:
    values: dict
    per_class: dict = field(default_factory=dict)  # metric -> {class: value}
    skipped: dict = field(default_factory=dict)  # metric -> [class names]
    n_items: int = 0

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "values": {k: _round(v) for k, v in self.values.items()},
            "per_class": {m: {c: _round(v) for c, v in d.items()} for m, d in self.per_class.items()},
            "skipped": self.skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _round(v):
    return None if v is None or math.isnan(v) else round(float(v), 6)


_TOPK = re.compile(r"^top(\d+)$")
METRIC_NAMES = ("accuracy", "map", "mauc", "lwlrap")


class UnknownMetric(ValueError):
    pass


def check_metric_name(name: str) -> str:
    if name in METRIC_NAMES or _TOPK.match(name):
        return name
    raise UnknownMetric(f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}, topK")


def metric_value(name: str, t: ScoreTable) -> float:
    check_metric_name(name)
    m = _TOPK.match(name)
    if m:
        return top_k_accuracy(t, min(int(m.group(1)), t.n_classes))
    return {"accuracy": accuracy, "map": mean_average_precision, "mauc": mauc, "lwlrap": lwlrap}[name](t)


def evaluate(t: ScoreTable, names) -> MetricReport:
    """Compute the named metrics with per-class breakdowns where they exist."""
    report = MetricReport({}, n_items=t.n_items)
    for name in names:
        report.values[name] = metric_value(name, t)
        per = None
        if name == "map":
            per = per_class_average_precision(t)
        elif name == "mauc":
            per = per_class_auc(t)
        elif name == "lwlrap":
            sums, counts = lwlrap_per_class(t)
            per = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        if per is not None:
            report.per_class[name] = dict(zip(t.class_names, per.tolist()))
            report.skipped[name] = [c for c, v in zip(t.class_names, per) if math.isnan(v)]
    return report

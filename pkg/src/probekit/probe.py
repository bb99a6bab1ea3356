"""Linear probes on frozen embeddings.

A probe is ``scores = W x + b`` followed by a softmax (single-label tasks)
or independent sigmoids (multi-label tasks), trained by minimizing mean
cross-entropy plus ``l2_lambda * ||W||_F^2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax

from . import metrics
from .container import read_container, write_container
from .embeddings import NormalizationStats
from .errors import DimMismatch, EmptyInput, LabelError

MAGIC = b"APRB"


class TaskKind(str, enum.Enum):
    MULTICLASS = "multiclass"
    MULTILABEL = "multilabel"


@dataclass
class LabeledData:
    """Feature rows with a binary ``N x C`` target matrix."""

    X: np.ndarray
    Y: np.ndarray
    clip_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2 or len(self.X) != len(self.Y):
            raise DimMismatch(f"X {self.X.shape} and Y {self.Y.shape} do not align")

    def __len__(self):
        return len(self.X)


def make_targets(labels, task: TaskKind, n_classes: int) -> np.ndarray:
    """Binary target matrix from integer labels (multiclass) or index lists (multilabel)."""
    task = TaskKind(task)
    Y = np.zeros((len(labels), n_classes))
    for i, lab in enumerate(labels):
        idx = [lab] if task is TaskKind.MULTICLASS else list(lab)
        for c in idx:
            if int(c) != c or not 0 <= c < n_classes:
                raise LabelError(f"item {i}: label {c!r} outside 0..{n_classes - 1}")
            Y[i, int(c)] = 1.0
    return Y


def check_targets(Y: np.ndarray, task: TaskKind) -> None:
    if not np.all((Y == 0) | (Y == 1)):
        raise LabelError("targets must be binary")
    if TaskKind(task) is TaskKind.MULTICLASS and not np.all(Y.sum(axis=1) == 1):
        raise LabelError("multiclass targets need exactly one label per item")


@dataclass
class ProbeModel:
    W: np.ndarray  # C x D
    b: np.ndarray  # C
    task: TaskKind
    class_names: list
    normalizer: NormalizationStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if self.W.shape[0] != len(self.b) or len(self.class_names) != len(self.b):
            raise DimMismatch("W rows, bias and class_names must agree")
        min_c = 2 if self.task is TaskKind.MULTICLASS else 1
        if len(self.b) < min_c:
            raise LabelError(f"{self.task.value} probe needs at least {min_c} classes")

    @classmethod
    def zeros(cls, n_classes, dim, task, class_names=None, normalizer=None):
        names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes), task, names, normalizer)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def logits(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimMismatch(f"input dim {X.shape[1]} != probe dim {self.dim}")
        return X @ self.W.T + self.b

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.task is TaskKind.MULTICLASS:
            return softmax(z, axis=1)
        return expit(z)


def predict(model: ProbeModel, e) -> np.ndarray:
    """Class probabilities for one embedding (an ``Embedding`` or a vector)."""
    vec = getattr(e, "vector", e)
    return model.predict_proba(np.asarray(vec)[None, :])[0]


def loss_and_grad(model: ProbeModel, X, Y, l2_lambda: float = 0.0):
    """Regularized objective on a batch and its exact gradient w.r.t. W and b."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    n = len(X)
    z = model.logits(X)
    if model.task is TaskKind.MULTICLASS:
        logp = log_softmax(z, axis=1)
        data_loss = -np.sum(Y * logp) / n
        gz = (np.exp(logp) - Y) / n
    else:
        # softplus(z) - y z, summed over classes
        data_loss = np.sum(np.logaddexp(0.0, z) - Y * z) / n
        gz = (expit(z) - Y) / n
    loss = data_loss + l2_lambda * np.sum(model.W * model.W)
    grad_w = gz.T @ X + 2.0 * l2_lambda * model.W
    grad_b = gz.sum(axis=0)
    return float(loss), grad_w, grad_b


@dataclass(frozen=True)
class TrainConfig:
    l2_lambda: float = 1e-4
    max_epochs: int = 100
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    early_stop_patience: int = 10
    halve_after: int = 3  # stalled validation epochs before the step is halved
    selection_metric: str | None = None  # None -> accuracy / mauc by task

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0 or self.l2_lambda < 0 or self.batch_size < 0:
            raise ValueError("max_epochs, l2_lambda and batch_size must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_metric(task: TaskKind) -> str:
    return "accuracy" if TaskKind(task) is TaskKind.MULTICLASS else "mauc"


def score(model: ProbeModel, data: LabeledData, metric: str) -> float:
    table = metrics.ScoreTable(model.predict_proba(data.X), data.Y, model.class_names)
    return metrics.metric_value(metric, table)


def train_probe(train: LabeledData, val: LabeledData | None, task, cfg: TrainConfig = TrainConfig(),
                class_names=None, normalizer=None) -> ProbeModel:
    """Momentum gradient descent from a zero model.

    With validation data the snapshot with the best validation metric is
    returned; the step size halves after ``halve_after`` stalled epochs and
    training stops after ``early_stop_patience``.  Without validation data
    the final iterate is returned.
    """
    task = TaskKind(task)
    if len(train) == 0:
        raise EmptyInput("empty training set")
    check_targets(train.Y, task)
    if val is not None:
        if len(val) == 0:
            val = None
        else:
            check_targets(val.Y, task)
            if val.Y.shape[1] != train.Y.shape[1]:
                raise LabelError("train and validation class counts differ")
    n, _ = train.X.shape
    model = ProbeModel.zeros(train.Y.shape[1], train.X.shape[1], task, class_names, normalizer)
    metric = cfg.selection_metric or default_metric(task)

    rng = np.random.default_rng(cfg.seed)
    vel_w = np.zeros_like(model.W)
    vel_b = np.zeros_like(model.b)
    lr = cfg.learning_rate
    history = []

    def val_score():
        s = score(model, val, metric)
        return -np.inf if np.isnan(s) else s

    best = (val_score(), 0, model.W.copy(), model.b.copy()) if val is not None else None
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if 0 < cfg.batch_size < n:
            order = rng.permutation(n)
            batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        else:
            batches = [slice(None)]
        for idx in batches:
            _, gw, gb = loss_and_grad(model, train.X[idx], train.Y[idx], cfg.l2_lambda)
            vel_w = cfg.momentum * vel_w - lr * gw
            vel_b = cfg.momentum * vel_b - lr * gb
            model.W += vel_w
            model.b += vel_b
        entry = {"epoch": epoch, "train_loss": loss_and_grad(model, train.X, train.Y, cfg.l2_lambda)[0]}
        if val is not None:
            s = val_score()
            entry["val_metric"] = s
            if s > best[0]:
                best = (s, epoch, model.W.copy(), model.b.copy())
                stall = 0
            else:
                stall += 1
                if cfg.halve_after and stall % cfg.halve_after == 0:
                    lr /= 2
                if cfg.early_stop_patience and stall >= cfg.early_stop_patience:
                    history.append(entry)
                    break
        history.append(entry)

    if best is not None:
        model.W, model.b = best[2], best[3]
        model.meta.update(best_epoch=best[1], val_metric=float(best[0]), selection_metric=metric)
    else:
        model.meta.update(best_epoch=cfg.max_epochs, selection_metric=metric)
    model.meta["history"] = history
    model.meta["train_config"] = cfg.to_dict()
    return model


# --- serialization ----------------------------------------------------------


def write_probe(model: ProbeModel, path) -> None:
    """Weights and bias as ``C x (D + 1)`` float64 rows in the APRB container."""
    meta = {
        "task": model.task.value,
        "class_names": list(model.class_names),
        "normalizer": model.normalizer.to_dict() if model.normalizer is not None else None,
        "meta": {k: v for k, v in model.meta.items() if k != "history"},
    }
    write_container(path, MAGIC, np.hstack([model.W, model.b[:, None]]), meta)


def read_probe(path) -> ProbeModel:
    matrix, meta = read_container(path, MAGIC)
    norm = meta.get("normalizer")
    return ProbeModel(
        matrix[:, :-1].copy(),
        matrix[:, -1].copy(),
        meta["task"],
        meta["class_names"],
        NormalizationStats.from_dict(norm) if norm else None,
        meta.get("meta", {}),
    )


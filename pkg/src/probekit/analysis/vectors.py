"""Label vectors taken from probe weights, standardization and cosine similarity."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatch, TooFewRows

DEFAULT_EPSILON = 1e-8


@dataclass
class LabelVectorSet:
    """One row per label: a probe's weight rows or an encoder's output-layer rows."""

    matrix: np.ndarray  # C x D
    names: list

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.names = [str(n) for n in self.names]
        if len(self.names) != self.matrix.shape[0]:
            raise DimMismatch(f"{len(self.names)} names for {self.matrix.shape[0]} rows")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("label vectors must be finite")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def extract_label_vectors(model) -> LabelVectorSet:
    """Rows of the probe's weight matrix paired with class names; the bias is dropped."""
    return LabelVectorSet(np.array(model.W, dtype=np.float64), list(model.class_names))


def mv_normalize(vs: LabelVectorSet, epsilon: float = DEFAULT_EPSILON) -> LabelVectorSet:
    """Per-dimension z-score across the rows of one set."""
    if len(vs) < 2:
        raise TooFewRows("mean-variance normalization needs at least two rows")
    x = vs.matrix
    std = np.maximum(x.std(axis=0), epsilon)
    return LabelVectorSet((x - x.mean(axis=0)) / std, vs.names)


def mv_normalize_pair(a: LabelVectorSet, b: LabelVectorSet, mode: str = "per-set",
                      epsilon: float = DEFAULT_EPSILON):
    """Standardize two sets independently (``per-set``) or over their union (``joint``)."""
    if mode == "per-set":
        return mv_normalize(a, epsilon), mv_normalize(b, epsilon)
    if mode != "joint":
        raise ValueError(f"unknown normalization mode {mode!r}")
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    both = np.vstack([a.matrix, b.matrix])
    if len(both) < 2:
        raise TooFewRows("mean-variance normalization needs at least two rows")
    z = (both - both.mean(axis=0)) / np.maximum(both.std(axis=0), epsilon)
    return LabelVectorSet(z[: len(a)], a.names), LabelVectorSet(z[len(a):], b.names)


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # rows x cols, in [-1, 1]
    row_names: list
    col_names: list
    zero_rows: list = field(default_factory=list)  # names whose vector was all zero

    @property
    def shape(self):
        return self.values.shape

    def reorder(self, row_order, col_order) -> "SimilarityMatrix":
        return SimilarityMatrix(
            self.values[np.ix_(row_order, col_order)],
            [self.row_names[i] for i in row_order],
            [self.col_names[j] for j in col_order],
            list(self.zero_rows),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *self.col_names])
        for name, row in zip(self.row_names, self.values):
            w.writerow([name, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()


def _unit_rows(x: np.ndarray):
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    return x / np.where(zero, 1.0, norms)[:, None], zero


def cosine_matrix(a: LabelVectorSet, b: LabelVectorSet | None = None) -> SimilarityMatrix:
    """Cosine similarity of every row of ``a`` against every row of ``b`` (default ``a``).

    Zero vectors get similarity 0 and are listed in ``zero_rows``.
    """
    symmetric = b is None
    b = a if symmetric else b
    if a.dim != b.dim:
        raise DimMismatch(f"cannot compare {a.dim}-D and {b.dim}-D vectors")
    ua, za = _unit_rows(a.matrix)
    ub, zb = _unit_rows(b.matrix)
    values = np.clip(ua @ ub.T, -1.0, 1.0)
    if symmetric:
        values = (values + values.T) / 2
        np.fill_diagonal(values, np.where(za, 0.0, 1.0))
    zero = [n for n, z in zip(a.names, za) if z]
    if not symmetric:
        zero += [n for n, z in zip(b.names, zb) if z]
    return SimilarityMatrix(values, list(a.names), list(b.names), zero)

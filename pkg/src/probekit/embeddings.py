"""Clip-level embedding sets, their on-disk format, and two-stage normalization.

Normalization is a per-dimension z-score with statistics fitted on training
data only, followed by scaling each vector to unit l2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import DimMismatch, EmptyInput

MAGIC = b"AEMB"
DEFAULT_EPSILON = 1e-8


@dataclass
class Embedding:
    vector: np.ndarray
    clip_id: str
    source_tag: str = ""
    degenerate: bool = False  # set by normalize() when z had zero norm

    @property
    def dim(self) -> int:
        return len(self.vector)


class EmbeddingSet:
    """Ordered, id-indexed collection of equal-length embeddings.

    Vectors are held as a single float32 matrix, which is also the storage
    precision, so a write/read round trip is exact.
    """

    def __init__(self, vectors, clip_ids, source_tags=None):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be N x D, got shape {vectors.shape}")
        clip_ids = [str(c) for c in clip_ids]
        if len(clip_ids) != len(vectors):
            raise ValueError("one clip_id per vector required")
        if source_tags is None:
            source_tags = [""] * len(clip_ids)
        source_tags = [str(t) for t in source_tags]
        if len(source_tags) != len(clip_ids):
            raise ValueError("one source_tag per vector required")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        index = {}
        for i, cid in enumerate(clip_ids):
            if cid in index:
                raise ValueError(f"duplicate clip_id {cid!r}")
            index[cid] = i
        self.vectors = vectors
        self.clip_ids = clip_ids
        self.source_tags = source_tags
        self.index = index

    @classmethod
    def from_embeddings(cls, items, dim=None):
        items = list(items)
        if dim is None:
            dim = items[0].dim if items else 0
        for e in items:
            if e.dim != dim:
                raise DimMismatch(f"{e.clip_id}: dim {e.dim} != {dim}")
        vectors = np.array([e.vector for e in items], dtype=np.float32).reshape(len(items), dim)
        return cls(vectors, [e.clip_id for e in items], [e.source_tag for e in items])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.clip_ids)

    def __getitem__(self, i) -> Embedding:
        return Embedding(self.vectors[i], self.clip_ids[i], self.source_tags[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.clip_ids == other.clip_ids
            and self.source_tags == other.source_tags
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    def lookup(self, clip_ids) -> np.ndarray:
        """Rows for ``clip_ids`` in the given order, as float64."""
        try:
            rows = [self.index[c] for c in clip_ids]
        except KeyError as exc:
            raise KeyError(f"clip_id {exc.args[0]!r} not in embedding set") from None
        return self.vectors[rows].astype(np.float64)

    def subset(self, clip_ids) -> "EmbeddingSet":
        rows = [self.index[c] for c in clip_ids]
        return EmbeddingSet(self.vectors[rows], [self.clip_ids[r] for r in rows],
                            [self.source_tags[r] for r in rows])


def write_embeddings(emb_set: EmbeddingSet, path) -> None:
    meta = {"clip_ids": emb_set.clip_ids, "source_tags": emb_set.source_tags}
    write_container(path, MAGIC, emb_set.vectors, meta)


def read_embeddings(path) -> EmbeddingSet:
    vectors, meta = read_container(path, MAGIC)
    return EmbeddingSet(vectors, meta["clip_ids"], meta.get("source_tags"))


# --- normalization ----------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray  # already clamped to >= epsilon
    epsilon: float = DEFAULT_EPSILON
    fitted_on: int = 1
    clamped: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "epsilon": self.epsilon,
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        std = np.asarray(d["std"], dtype=np.float64)
        return cls(np.asarray(d["mean"], dtype=np.float64), std, d["epsilon"], d["fitted_on"],
                   std <= d["epsilon"])


def fit_normalizer(train, epsilon: float = DEFAULT_EPSILON) -> NormalizationStats:
    """Population mean/std per dimension; ``train`` is an EmbeddingSet or an N x D array."""
    x = train.vectors if isinstance(train, EmbeddingSet) else train
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("cannot fit normalization statistics on an empty set")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    clamped = std <= epsilon
    return NormalizationStats(mean, np.maximum(std, epsilon), epsilon, x.shape[0], clamped)


def standardize(stats: NormalizationStats, x) -> np.ndarray:
    """The pre-l2 stage: (x - mean) / std, row-wise."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.dim:
        raise DimMismatch(f"vector dim {x.shape[-1]} != normalizer dim {stats.dim}")
    return (x - stats.mean) / stats.std


def l2_normalize(z):
    """Scale rows to unit norm; returns ``(rows, degenerate_mask)`` with zero rows left at zero."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    norms = np.linalg.norm(z, axis=1)
    degenerate = norms == 0
    safe = np.where(degenerate, 1.0, norms)
    return z / safe[:, None], degenerate


def normalize_array(stats: NormalizationStats, x):
    """Batch form of :func:`normalize`: ``(N x D rows, degenerate mask)``."""
    return l2_normalize(standardize(stats, x))


def normalize(stats: NormalizationStats, e: Embedding) -> Embedding:
    rows, degenerate = normalize_array(stats, np.atleast_2d(e.vector))
    return Embedding(rows[0], e.clip_id, e.source_tag, bool(degenerate[0]))

"""Agglomerative clustering of label vectors.

Node ids follow the usual convention: leaves are ``0..C-1`` and the
cluster created by merge ``i`` gets id ``C + i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .vectors import LabelVectorSet

LINKAGES = ("average", "single", "complete")
DISTANCES = ("cosine", "euclidean")


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass
class Dendrogram:
    names: list
    merges: list  # Merge, in merge order

    @property
    def n_leaves(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return self.n_leaves + len(self.merges) - 1 if self.merges else 0

    def children(self, node: int):
        if node < self.n_leaves:
            return None
        m = self.merges[node - self.n_leaves]
        return m.left, m.right

    def height(self, node: int) -> float:
        return 0.0 if node < self.n_leaves else self.merges[node - self.n_leaves].height

    def leaf_order(self) -> list:
        """Leaf indices left to right."""
        if not self.names:
            return []
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            kids = self.children(node)
            if kids is None:
                out.append(node)
            else:
                stack.extend((kids[1], kids[0]))
        return out

    def cut(self, n_clusters: int) -> np.ndarray:
        """Flat labels after undoing the last ``n_clusters - 1`` merges.

        Clusters are numbered in order of their smallest leaf index.
        """
        if not 1 <= n_clusters <= max(self.n_leaves, 1):
            raise ValueError(f"n_clusters must be in 1..{self.n_leaves}")
        return self._flatten(self.merges[: self.n_leaves - n_clusters])

    def cut_height(self, height: float) -> np.ndarray:
        return self._flatten([m for m in self.merges if m.height <= height])

    def _flatten(self, merges) -> np.ndarray:
        parent = list(range(self.n_leaves + len(self.merges)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, m in enumerate(merges):
            node = self.n_leaves + i
            parent[find(m.left)] = node
            parent[find(m.right)] = node
        roots = [find(leaf) for leaf in range(self.n_leaves)]
        relabel = {}
        return np.array([relabel.setdefault(r, len(relabel)) for r in roots])

    def to_linkage(self) -> np.ndarray:
        """``(C-1) x 4`` array in the layout scipy.cluster.hierarchy uses."""
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=np.float64).reshape(-1, 4)

    def to_nested(self) -> dict:
        def build(node):
            kids = self.children(node)
            if kids is None:
                return {"name": self.names[node], "height": 0.0}
            return {"name": f"node{node}", "height": round(self.height(node), 9),
                    "children": [build(kids[0]), build(kids[1])]}

        return build(self.root) if self.names else {}

    def to_json(self) -> str:
        return json.dumps(self.to_nested(), indent=2) + "\n"


def pairwise_distances(x: np.ndarray, distance: str = "cosine") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if distance == "euclidean":
        d = np.empty((len(x), len(x)))
        for i in range(len(x)):
            d[i] = np.sqrt(np.sum((x - x[i]) ** 2, axis=1))
    elif distance == "cosine":
        norms = np.linalg.norm(x, axis=1)
        u = x / np.where(norms == 0, 1.0, norms)[:, None]
        d = np.clip(1.0 - u @ u.T, 0.0, 2.0)
        # identical rows are at distance exactly 0, not a rounding residue
        _, inverse = np.unique(x, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        d[inverse[:, None] == inverse[None, :]] = 0.0
    else:
        raise ValueError(f"unknown distance {distance!r}; choose from {DISTANCES}")
    d = (d + d.T) / 2
    np.fill_diagonal(d, 0.0)
    return d


def agglomerate(vs: LabelVectorSet, linkage: str = "average", distance: str = "cosine") -> Dendrogram:
    """Bottom-up clustering; among equally close pairs the one with the smallest leaf indices merges first."""
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    n = len(vs)
    if n == 0:
        return Dendrogram([], [])
    d = pairwise_distances(vs.matrix, distance)
    np.fill_diagonal(d, np.inf)
    size = np.ones(n, dtype=np.int64)
    node = np.arange(n)
    min_leaf = np.arange(n)
    merges = []
    for step in range(n - 1):
        h = d.min()
        ii, jj = np.nonzero(d == h)
        lo = np.minimum(min_leaf[ii], min_leaf[jj])
        hi = np.maximum(min_leaf[ii], min_leaf[jj])
        pick = np.lexsort((hi, lo))[0]
        a, b = ii[pick], jj[pick]
        if min_leaf[a] > min_leaf[b]:
            a, b = b, a
        merges.append(Merge(int(node[a]), int(node[b]), float(h), int(size[a] + size[b])))

        if linkage == "average":
            new = (size[a] * d[a] + size[b] * d[b]) / (size[a] + size[b])
        elif linkage == "single":
            new = np.minimum(d[a], d[b])
        else:
            new = np.maximum(d[a], d[b])
        # rounding must not let a merged cluster sit closer than the merge height
        new = np.maximum(new, h)
        d[a, :] = new
        d[:, a] = new
        d[a, a] = np.inf
        d[b, :] = np.inf
        d[:, b] = np.inf
        size[a] += size[b]
        node[a] = n + step
    return Dendrogram(list(vs.names), merges)

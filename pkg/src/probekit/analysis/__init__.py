"""Interpretation of trained probes: label-vector similarity, clustering, t-SNE and figures."""

from .cluster import Dendrogram, Merge, agglomerate, pairwise_distances
from .render import render_dendrogram, render_heatmap
from .tsne import conditional_probabilities, joint_probabilities, row_entropies, tsne
from .vectors import (
    LabelVectorSet,
    SimilarityMatrix,
    cosine_matrix,
    extract_label_vectors,
    mv_normalize,
    mv_normalize_pair,
)

__all__ = [
    "Dendrogram",
    "LabelVectorSet",
    "Merge",
    "SimilarityMatrix",
    "agglomerate",
    "conditional_probabilities",
    "cosine_matrix",
    "extract_label_vectors",
    "joint_probabilities",
    "mv_normalize",
    "mv_normalize_pair",
    "pairwise_distances",
    "render_dendrogram",
    "render_heatmap",
    "row_entropies",
    "tsne",
]

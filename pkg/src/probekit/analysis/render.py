"""Dependency-free SVG rendering for dendrograms and similarity heatmaps.

Output is plain text with fixed number formatting so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .cluster import Dendrogram
from .vectors import SimilarityMatrix

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
           "#e6ab02", "#a6761d", "#1f78b4", "#b2df8a", "#fb9a99")
LINK_COLOR = "#444444"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _check_names(names):
    for n in names:
        if not str(n).strip():
            raise ValueError("labels must be non-empty to render")


def render_dendrogram(d: Dendrogram, cut_height: float | None = None, leaf_spacing: float = 16.0,
                      plot_height: float = 300.0, label_space: float = 140.0) -> str:
    """Leaves along the bottom in dendrogram order, merge height upward.

    With ``cut_height`` set, subtrees that merge at or below the cut are
    coloured per cluster; links above it stay grey.
    """
    _check_names(d.names)
    n = d.n_leaves
    order = d.leaf_order()
    margin = 20.0
    width = 2 * margin + max(n, 1) * leaf_spacing
    height = plot_height + label_space + 2 * margin
    top = max((m.height for m in d.merges), default=0.0) or 1.0

    def ypos(h):
        return margin + plot_height * (1.0 - h / top)

    xs = {leaf: margin + (i + 0.5) * leaf_spacing for i, leaf in enumerate(order)}
    colour = {}
    if cut_height is not None:
        flat = d.cut_height(cut_height)
        for leaf in range(n):
            colour[leaf] = PALETTE[int(flat[leaf]) % len(PALETTE)]

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        '<g fill="none" stroke-width="1.2">',
    ]
    for i, m in enumerate(d.merges):
        node = n + i
        xs[node] = (xs[m.left] + xs[m.right]) / 2
        c = LINK_COLOR
        if cut_height is not None and m.height <= cut_height:
            c = colour[_first_leaf(d, node)]
            colour[node] = c
        y = ypos(m.height)
        path = (f"M{_f(xs[m.left])},{_f(ypos(d.height(m.left)))} V{_f(y)} "
                f"H{_f(xs[m.right])} V{_f(ypos(d.height(m.right)))}")
        lines.append(f'<path class="link" d="{path}" stroke="{c}"/>')
    lines.append("</g>")
    lines.append('<g font-family="sans-serif" font-size="10">')
    base = margin + plot_height + 6
    for leaf in order:
        x = xs[leaf]
        lines.append(
            f'<text class="leaf" x="{_f(x)}" y="{_f(base)}" transform="rotate(90 {_f(x)} {_f(base)})" '
            f'dominant-baseline="middle">{escape(d.names[leaf])}</text>'
        )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _first_leaf(d: Dendrogram, node: int) -> int:
    while node >= d.n_leaves:
        node = d.children(node)[0]
    return node


def _colour(v: float) -> str:
    """Diverging blue-white-red ramp over [-1, 1]."""
    t = (np.clip(v, -1.0, 1.0) + 1.0) / 2.0
    if t < 0.5:
        s = t / 0.5
        rgb = (int(round(33 + s * 222)), int(round(102 + s * 153)), int(round(172 + s * 83)))
    else:
        s = (t - 0.5) / 0.5
        rgb = (int(round(255 - s * 77)), int(round(255 - s * 231)), int(round(255 - s * 212)))
    return "#%02x%02x%02x" % rgb


def render_heatmap(m: SimilarityMatrix, cell: float = 14.0, label_space: float = 140.0) -> str:
    """One rect per entry; rows down the left, columns across the top."""
    _check_names(m.row_names)
    _check_names(m.col_names)
    n_rows, n_cols = m.values.shape
    width = label_space + n_cols * cell + 10
    height = label_space + n_rows * cell + 10
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        '<g font-family="sans-serif" font-size="10">',
    ]
    for j, name in enumerate(m.col_names):
        x = label_space + (j + 0.5) * cell
        y = label_space - 4
        lines.append(f'<text x="{_f(x)}" y="{_f(y)}" transform="rotate(-90 {_f(x)} {_f(y)})">{escape(name)}</text>')
    for i, name in enumerate(m.row_names):
        y = label_space + (i + 0.5) * cell
        lines.append(f'<text x="{_f(label_space - 4)}" y="{_f(y)}" text-anchor="end" '
                     f'dominant-baseline="middle">{escape(name)}</text>')
    lines.append("</g>")
    lines.append("<g>")
    for i in range(n_rows):
        for j in range(n_cols):
            v = float(m.values[i, j])
            lines.append(
                f'<rect class="cell" x="{_f(label_space + j * cell)}" y="{_f(label_space + i * cell)}" '
                f'width="{_f(cell)}" height="{_f(cell)}" fill="{_colour(v)}"><title>{v:.3f}</title></rect>'
            )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"

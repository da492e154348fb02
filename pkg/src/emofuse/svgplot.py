"""Dependency-free SVG renderings: dendrogram, PCA scatter, scree bars.

Coordinates are formatted with fixed precision so identical inputs always
produce byte-identical files (the plots are diffable in golden tests).
"""

from __future__ import annotations

import numpy as np

from .analysis import Dendrogram

PALETTE = (
    "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231",
    "#911eb4", "#46f0f0", "#f032e6", "#bcf60c", "#fabebe",
    "#008080", "#e6beff", "#9a6324", "#fffac8", "#800000",
)


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>'] + body + ["</svg>"]) + "\n"


def _line(x1, y1, x2, y2, color="#333333", width=1.5) -> str:
    return (
        f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
        f'stroke="{color}" stroke-width="{width}"/>'
    )


def _text(x, y, s, size=11, anchor="middle", rotate=None, color="#222222") -> str:
    transform = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" font-family="sans-serif" '
        f'text-anchor="{anchor}" fill="{color}"{transform}>{s}</text>'
    )


def dendrogram_svg(dendro: Dendrogram, labels: list[str]) -> str:
    """Bottom-up dendrogram with labeled leaves."""
    n = dendro.n_leaves
    width, height = 60 * n + 60, 420
    top, bottom, left = 30.0, height - 80.0, 40.0
    max_h = max((m.height for m in dendro.merges), default=1.0) or 1.0

    children = {m.new_id: (m.a, m.b) for m in dendro.merges}

    def leaves_of(node: int) -> list[int]:
        if node < n:
            return [node]
        a, b = children[node]
        return leaves_of(a) + leaves_of(b)

    root = dendro.merges[-1].new_id if dendro.merges else 0
    order = leaves_of(root)
    xpos = {leaf: left + 30.0 + 60.0 * i for i, leaf in enumerate(order)}

    def y_of(h: float) -> float:
        return bottom - (bottom - top) * (h / max_h)

    node_x = dict(xpos)
    node_y = {leaf: bottom for leaf in order}
    body = []
    for m in dendro.merges:
        xa, xb = node_x[m.a], node_x[m.b]
        y = y_of(m.height)
        body.append(_line(xa, node_y[m.a], xa, y))
        body.append(_line(xb, node_y[m.b], xb, y))
        body.append(_line(xa, y, xb, y))
        node_x[m.new_id] = (xa + xb) / 2.0
        node_y[m.new_id] = y
    for leaf in order:
        name = labels[leaf] if leaf < len(labels) else str(leaf)
        body.append(_text(xpos[leaf], bottom + 14, name, rotate=45, anchor="start", size=10))
    body.append(_text(left - 20, top + 10, _fmt(max_h), anchor="start", size=9))
    body.append(_text(left - 20, bottom, "0", anchor="start", size=9))
    return _svg(width, height, body)


def pca_scatter_svg(
    scores: np.ndarray,
    color_indices: np.ndarray,
    class_names: list[str],
    loadings: np.ndarray,
    var_names: list[str],
) -> str:
    """Scatter of the first two components, points colored by class, with the
    variable loadings drawn as arrows from the center."""
    width, height = 640, 520
    left, right, top, bottom = 60.0, width - 30.0, 30.0, height - 60.0
    xs, ys = scores[:, 0], scores[:, 1]
    pad = 0.05
    xmin, xmax = float(xs.min()), float(xs.max())
    ymin, ymax = float(ys.min()), float(ys.max())
    xspan = (xmax - xmin) or 1.0
    yspan = (ymax - ymin) or 1.0
    xmin -= pad * xspan
    xmax += pad * xspan
    ymin -= pad * yspan
    ymax += pad * yspan

    def sx(v):
        return left + (right - left) * (v - xmin) / (xmax - xmin)

    def sy(v):
        return bottom - (bottom - top) * (v - ymin) / (ymax - ymin)

    body = []
    for i in range(scores.shape[0]):
        color = PALETTE[int(color_indices[i]) % len(PALETTE)]
        body.append(
            f'<circle cx="{_fmt(sx(xs[i]))}" cy="{_fmt(sy(ys[i]))}" r="3" '
            f'fill="{color}" fill-opacity="0.7"/>'
        )
    # loading arrows, scaled to a third of the plot span
    arrow_scale = 0.33 * min(xmax - xmin, ymax - ymin) / (np.abs(loadings[:, :2]).max() or 1.0)
    cx, cy = sx((xmin + xmax) / 2.0), sy((ymin + ymax) / 2.0)
    for i, name in enumerate(var_names):
        dx, dy = loadings[i, 0] * arrow_scale, loadings[i, 1] * arrow_scale
        tip_x = sx((xmin + xmax) / 2.0 + dx)
        tip_y = sy((ymin + ymax) / 2.0 + dy)
        body.append(_line(cx, cy, tip_x, tip_y, color="#555555", width=1.0))
        body.append(_text(tip_x, tip_y - 3, name, size=9, color="#555555"))
    body.append(_text((left + right) / 2.0, height - 18, "pc1"))
    body.append(_text(18, (top + bottom) / 2.0, "pc2", rotate=-90))
    seen = sorted(set(int(c) for c in color_indices))
    for slot, cls in enumerate(seen):
        y = top + 14.0 * slot
        color = PALETTE[cls % len(PALETTE)]
        body.append(f'<circle cx="{_fmt(right - 100)}" cy="{_fmt(y)}" r="4" fill="{color}"/>')
        body.append(_text(right - 90, y + 4, class_names[cls], anchor="start", size=10))
    return _svg(width, height, body)


def scree_svg(ratios: np.ndarray) -> str:
    """Bar chart of explained variance ratios by component."""
    n = len(ratios)
    width, height = 60 * n + 100, 360
    left, bottom, top = 60.0, height - 50.0, 30.0
    max_r = float(max(ratios.max(), 1e-9))
    body = []
    for i, r in enumerate(ratios):
        x = left + 60.0 * i + 10.0
        bar_h = (bottom - top) * float(r) / max_r
        body.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(bottom - bar_h)}" width="40" height="{_fmt(bar_h)}" '
            f'fill="#4363d8"/>'
        )
        body.append(_text(x + 20, bottom + 16, f"pc{i + 1}", size=10))
        body.append(_text(x + 20, bottom - bar_h - 5, f"{float(r) * 100.0:.1f}%", size=9))
    body.append(_line(left, bottom, left + 60.0 * n + 10.0, bottom, color="#222222", width=1.0))
    return _svg(width, height, body)

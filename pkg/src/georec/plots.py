"""Static SVG renderings of embeddings, reachability, and metrics.

The files are assembled as plain strings with fixed two-decimal
coordinates, so identical inputs produce byte-identical SVGs and the
pipeline's determinism extends to its figures. No plotting library is
involved; the charts are simple enough that rectangles and text cover
everything needed.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np

PALETTE = (
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)

NOISE_COLOR = "#888888"


def _color(label: int) -> str:
    return NOISE_COLOR if label < 0 else PALETTE[label % len(PALETTE)]


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    style = (
        "<style>text{font-family:monospace;font-size:11px;}"
        ".title{font-size:13px;font-weight:bold;}</style>"
    )
    return "\n".join([head, style, *body, "</svg>"]) + "\n"


def scatter_svg(
    coords: np.ndarray,
    names: Sequence[str],
    labels: Sequence[int] | None = None,
    title: str = "embedding",
) -> str:
    """Labeled 2-D scatter; points are colored by cluster when given."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] != len(names):
        raise ValueError("coords must be (n, 2) with one name per row")
    width, height, margin = 640, 640, 50
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)

    def place(pt):
        x = margin + (pt[0] - lo[0]) / span[0] * (width - 2 * margin)
        y = height - margin - (pt[1] - lo[1]) / span[1] * (height - 2 * margin)
        return x, y

    body = [f'<text class="title" x="{margin}" y="24">{title}</text>']
    for i, name in enumerate(names):
        x, y = place(coords[i])
        color = _color(labels[i]) if labels is not None else PALETTE[0]
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        body.append(f'<text x="{x + 5:.2f}" y="{y + 4:.2f}">{name}</text>')
    return _svg(width, height, body)


def reachability_svg(
    reachability: np.ndarray,
    labels: Sequence[int] | None = None,
    title: str = "reachability",
) -> str:
    """Bar plot of the cluster ordering's reachability distances.

    Bars follow the ordering left to right; unreachable points (inf)
    are drawn at full height in gray. Bars are colored by the cluster
    label of the point in that position when labels are given.
    """
    reach = np.asarray(reachability, dtype=np.float64)
    n = reach.shape[0]
    if n == 0:
        raise ValueError("nothing to plot")
    width, height, margin = max(320, 12 * n + 100), 320, 50
    finite = reach[np.isfinite(reach)]
    top = float(finite.max()) if finite.size else 1.0
    top = top if top > 0 else 1.0
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    bar_w = plot_w / n
    body = [f'<text class="title" x="{margin}" y="24">{title}</text>']
    for i, value in enumerate(reach):
        frac = 1.0 if math.isinf(value) else min(value / top, 1.0)
        h = frac * plot_h
        x = margin + i * bar_w
        y = height - margin - h
        color = NOISE_COLOR if math.isinf(value) else _color(labels[i] if labels is not None else 0)
        body.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bar_w - 1, 1):.2f}" height="{h:.2f}" fill="{color}"/>'
        )
    body.append(
        f'<text x="{margin}" y="{height - margin + 16:.2f}">max finite reachability: {top:.4f}</text>'
    )
    return _svg(width, height, body)


def metric_bars_svg(
    means: Mapping[str, Mapping[tuple[str, int], float]],
    keys: Sequence[tuple[str, int]],
    title: str = "metrics",
) -> str:
    """Grouped bar chart: one panel per metric/cutoff, one bar per model."""
    models = list(means)
    if not models or not keys:
        raise ValueError("nothing to plot")
    panel_w, panel_h, margin = 70 + 60 * len(models), 200, 46
    width = margin + len(keys) * panel_w
    height = panel_h + 2 * margin + 14 * len(models)
    body = [f'<text class="title" x="{margin}" y="24">{title}</text>']
    for p, (metric, k) in enumerate(keys):
        x0 = margin + p * panel_w
        body.append(f'<text x="{x0}" y="{margin - 6}">{metric}@{k}</text>')
        for m, model in enumerate(models):
            value = means[model][(metric, k)]
            h = max(0.0, min(value, 1.0)) * (panel_h - 20)
            x = x0 + m * 60
            y = margin + (panel_h - 20) - h
            body.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="40" height="{h:.2f}" fill="{PALETTE[m % len(PALETTE)]}"/>'
            )
            body.append(f'<text x="{x:.2f}" y="{margin + panel_h - 4:.2f}">{value:.3f}</text>')
    for m, model in enumerate(models):
        y = panel_h + margin + 20 + 14 * m
        body.append(f'<rect x="{margin}" y="{y - 9}" width="10" height="10" fill="{PALETTE[m % len(PALETTE)]}"/>')
        body.append(f'<text x="{margin + 16}" y="{y}">{model}</text>')
    return _svg(width, height, body)


def write_svg(path, content: str) -> None:
    Path(path).write_text(content)

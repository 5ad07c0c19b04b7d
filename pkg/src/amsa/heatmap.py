"""Self-contained SVG heatmaps for ROI slices (red = loss, green = profit)."""

from __future__ import annotations

import math
from html import escape

import numpy as np

from .learning import SliceTable, _label

CELL_W = 64
CELL_H = 28
LEFT = 110
TOP = 60


def diverging_color(value: float, limit: float) -> str:
    """White at zero, saturating to red for -limit and green for +limit."""
    if math.isnan(value):
        return "#dddddd"
    t = 0.0 if limit <= 0 else max(-1.0, min(1.0, value / limit))
    if t >= 0:
        r, g, b = 255 - int(200 * t), 255 - int(75 * t), 255 - int(200 * t)
    else:
        t = -t
        r, g, b = 255 - int(35 * t), 255 - int(200 * t), 255 - int(200 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(table: SliceTable, title: str = "") -> str:
    mean = table.mean
    finite = mean[np.isfinite(mean)]
    limit = float(np.max(np.abs(finite))) if finite.size else 0.0
    n_rows, n_cols = mean.shape
    width = LEFT + n_cols * CELL_W + 20
    height = TOP + n_rows * CELL_H + 40

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{LEFT}" y="20" font-size="14">{escape(title)}</text>',
        f'<text x="{LEFT}" y="{TOP - 22}">{escape(table.col_axis)} &#8594;</text>',
        f'<text x="8" y="{TOP - 8}">{escape(table.row_axis)} &#8595;</text>',
    ]
    for c, label in enumerate(table.col_labels):
        x = LEFT + c * CELL_W + CELL_W / 2
        out.append(f'<text x="{x}" y="{TOP - 6}" text-anchor="middle">{escape(_label(label))}</text>')
    for r, label in enumerate(table.row_labels):
        y = TOP + r * CELL_H
        out.append(f'<text x="{LEFT - 6}" y="{y + CELL_H / 2 + 4}" text-anchor="end">{escape(_label(label))}</text>')
        for c in range(n_cols):
            v = float(mean[r, c])
            x = LEFT + c * CELL_W
            out.append(f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" '
                       f'fill="{diverging_color(v, limit)}" stroke="#ffffff"/>')
            if not math.isnan(v):
                out.append(f'<text x="{x + CELL_W / 2}" y="{y + CELL_H / 2 + 4}" '
                           f'text-anchor="middle">{100 * v:.3f}%</text>')
    out.append(f'<text x="{LEFT}" y="{height - 12}" fill="#555555">mean daily ROI; '
               f'scale &#177;{100 * limit:.3f}%, grey = no data</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

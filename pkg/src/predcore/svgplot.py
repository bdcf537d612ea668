"""Minimal hand-rolled SVG renderings of the emitted plot data.

Line charts and histograms only, no styling knobs beyond a title; the
plot-data CSV files are the real output and these renderings exist so a
run can be eyeballed without a plotting stack.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["render_lines", "render_histogram"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 40, 45


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return out_lo + (np.asarray(values, dtype=float) - lo) * (out_hi - out_lo) / span


def _frame(title, xlo, xhi, ylo, yhi):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15">'
        f"{escape(title)}</text>",
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
        'stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{_ML}" y="{_H - _MB + 16}" text-anchor="middle">{xlo:.3g}</text>',
        f'<text x="{_W - _MR}" y="{_H - _MB + 16}" text-anchor="middle">'
        f"{xhi:.3g}</text>",
        f'<text x="{_ML - 6}" y="{_H - _MB}" text-anchor="end">{ylo:.3g}</text>',
        f'<text x="{_ML - 6}" y="{_MT + 6}" text-anchor="end">{yhi:.3g}</text>',
    ]
    return parts


def render_lines(x, series: dict, title: str = "", path=None) -> str:
    """Polyline chart of named series over shared x values."""
    x = np.asarray(x, dtype=float)
    if x.size == 0 or not series:
        raise ValueError("need x values and at least one series")
    ys = {name: np.asarray(v, dtype=float) for name, v in series.items()}
    ylo = min(v.min() for v in ys.values())
    yhi = max(v.max() for v in ys.values())
    parts = _frame(title, x.min(), x.max(), ylo, yhi)
    px = _scale(x, x.min(), x.max(), _ML, _W - _MR)
    for i, (name, v) in enumerate(sorted(ys.items())):
        py = _scale(v, ylo, yhi, _H - _MB, _MT)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 4}" y="{_MT + 16 * (i + 1)}" fill="{color}" '
            f'text-anchor="end">{escape(name)}</text>'
        )
    parts.append("</svg>")
    svg = "\n".join(parts)
    if path is not None:
        Path(path).write_text(svg)
    return svg


def render_histogram(bin_left, bin_right, counts, title: str = "", path=None) -> str:
    """Bar rendering of precomputed histogram bins."""
    left = np.asarray(bin_left, dtype=float)
    right = np.asarray(bin_right, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if left.size == 0 or left.shape != right.shape or left.shape != counts.shape:
        raise ValueError("bin arrays must be non-empty and matching")
    xlo, xhi = left.min(), right.max()
    yhi = max(counts.max(), 1.0)
    parts = _frame(title, xlo, xhi, 0.0, yhi)
    for lo, hi, c in zip(left, right, counts):
        x0 = _scale(lo, xlo, xhi, _ML, _W - _MR)
        x1 = _scale(hi, xlo, xhi, _ML, _W - _MR)
        y = _scale(c, 0.0, yhi, _H - _MB, _MT)
        parts.append(
            f'<rect x="{x0:.2f}" y="{y:.2f}" width="{max(x1 - x0 - 1, 1):.2f}" '
            f'height="{_H - _MB - y:.2f}" fill="{_PALETTE[0]}" opacity="0.8"/>'
        )
    parts.append("</svg>")
    svg = "\n".join(parts)
    if path is not None:
        Path(path).write_text(svg)
    return svg

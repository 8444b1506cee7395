"""Minimal standalone SVG scatter plots.

Axes and tick marks are drawn as ``<path>`` elements, so the only ``<line>``
in a document is the fitted line when one is requested.  The plotted data
range is exposed on the root element as ``data-x-min`` / ``data-x-max`` /
``data-y-min`` / ``data-y-max``.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .errors import PreconditionError

WIDTH, HEIGHT = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 36, 48
MARGIN = 0.05
N_TICKS = 5


def padded_range(values) -> tuple[float, float]:
    """``[min - 5% span, max + 5% span]``; a zero span is padded by 5% of the value (0.5 at 0)."""
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    if span == 0.0:
        pad = 0.5 if lo == 0.0 else 0.05 * abs(lo)
        return lo - pad, hi + pad
    return lo - MARGIN * span, hi + MARGIN * span


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _num(v: float) -> str:
    return f"{v:.2f}"


def render_scatter(points, fitted_line: tuple[float, float] | None = None, *,
                   title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """SVG text for a scatter plot.  ``fitted_line`` is (slope, intercept)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if pts.shape[0] == 0:
        raise PreconditionError("need at least one finite point")
    x0, x1 = padded_range(pts[:, 0])
    y0, y1 = padded_range(pts[:, 1])
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{x0!r}" data-x-max="{x1!r}" '
        f'data-y-min="{y0!r}" data-y-max="{y1!r}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
    ]
    axes = (f"M{LEFT},{TOP} L{LEFT},{TOP + ph} L{LEFT + pw},{TOP + ph}")
    out.append(f'<path class="axes" d="{axes}" fill="none" stroke="black"/>')

    ticks, labels = [], []
    for k in range(N_TICKS):
        xv = x0 + (x1 - x0) * k / (N_TICKS - 1)
        px = sx(xv)
        ticks.append(f"M{_num(px)},{TOP + ph} L{_num(px)},{TOP + ph + 5}")
        labels.append(f'<text class="xtick" x="{_num(px)}" y="{TOP + ph + 18}" '
                      f'text-anchor="middle" font-family="sans-serif" font-size="10" '
                      f'data-value="{xv!r}">{_fmt(xv)}</text>')
        yv = y0 + (y1 - y0) * k / (N_TICKS - 1)
        py = sy(yv)
        ticks.append(f"M{LEFT - 5},{_num(py)} L{LEFT},{_num(py)}")
        labels.append(f'<text class="ytick" x="{LEFT - 8}" y="{_num(py + 3)}" '
                      f'text-anchor="end" font-family="sans-serif" font-size="10" '
                      f'data-value="{yv!r}">{_fmt(yv)}</text>')
    out.append(f'<path class="ticks" d="{" ".join(ticks)}" stroke="black"/>')
    out.extend(labels)
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 14 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>')

    for x, y in pts:
        out.append(f'<circle cx="{_num(sx(x))}" cy="{_num(sy(y))}" r="3" '
                   f'fill="#1f77b4" fill-opacity="0.7"/>')

    if fitted_line is not None:
        slope, intercept = map(float, fitted_line)
        if not (math.isfinite(slope) and math.isfinite(intercept)):
            raise PreconditionError("fitted line must be finite")
        ya, yb = slope * x0 + intercept, slope * x1 + intercept
        out.append(f'<line class="fit" x1="{_num(sx(x0))}" y1="{_num(sy(ya))}" '
                   f'x2="{_num(sx(x1))}" y2="{_num(sy(yb))}" stroke="#d62728" stroke-width="1.5" '
                   f'data-slope={quoteattr(repr(slope))} data-intercept={quoteattr(repr(intercept))}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_scatter_svg(points, path, fitted_line=None, *, title: str = "", xlabel: str = "",
                     ylabel: str = "") -> Path:
    path = Path(path)
    text = render_scatter(points, fitted_line, title=title, xlabel=xlabel, ylabel=ylabel)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path

"""Minimal deterministic SVG line charts.

No plotting dependency: charts are assembled as strings.  Output depends
only on the data and labels passed in, so chart files are byte-identical
across runs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError

__all__ = ["line_chart"]

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
)


def _ticks(lo: float, hi: float, n: int = 5):
    """Round tick positions covering [lo, hi] on a 1-2-5 ladder."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DataError("axis limits must be finite")
    if hi <= lo:
        hi = lo + (abs(lo) if lo else 1.0)
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    value = first
    while value <= hi + step * 1e-9:
        ticks.append(0.0 if abs(value) < step * 1e-9 else value)
        value += step
    return ticks


def line_chart(
    series,
    title: str,
    x_label: str,
    y_label: str,
    width: int = 720,
    height: int = 440,
) -> str:
    """Render labelled (x, y) series as an SVG line chart.

    Parameters
    ----------
    series : sequence of (label, x, y)
        One or more series; x and y are 1-d arrays of equal length.
    title, x_label, y_label : str
    width, height : int
        Canvas size in pixels.

    Returns
    -------
    str
        A complete standalone SVG document.
    """
    if not series:
        raise DataError("need at least one series to plot")
    cleaned = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
            raise DataError(f"series {label!r} must be two equal 1-d arrays")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise DataError(f"series {label!r} must be finite")
        cleaned.append((str(label), xs, ys))

    x_lo = min(float(xs.min()) for _, xs, _ in cleaned)
    x_hi = max(float(xs.max()) for _, xs, _ in cleaned)
    y_lo = min(float(ys.min()) for _, _, ys in cleaned)
    y_hi = max(float(ys.max()) for _, _, ys in cleaned)
    if y_hi == y_lo:
        pad = abs(y_hi) if y_hi else 1.0
        y_lo, y_hi = y_lo - 0.5 * pad, y_hi + 0.5 * pad
    else:
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    left, right, top, bottom = 78, 24, 44, 56
    plot_w = width - left - right
    plot_h = height - top - bottom

    def sx(value: float) -> float:
        return left + (value - x_lo) / (x_hi - x_lo) * plot_w

    def sy(value: float) -> float:
        return top + plot_h - (value - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15" font-weight="bold">'
        f"{_escape(title)}</text>",
    ]
    for tick in _ticks(x_lo, x_hi):
        x = sx(tick)
        parts.append(
            f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" '
            f'y2="{top + plot_h}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{top + plot_h + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{tick:.6g}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        y = sy(tick)
        parts.append(
            f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" '
            f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick:.6g}</text>'
        )
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 12}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"{_escape(x_label)}</text>"
    )
    parts.append(
        f'<text x="20" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 20 {top + plot_h / 2:.1f})">'
        f"{_escape(y_label)}</text>"
    )
    for k, (label, xs, ys) in enumerate(cleaned):
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        ly = top + 14 + 16 * k
        parts.append(
            f'<line x1="{left + plot_w - 150}" y1="{ly - 4}" '
            f'x2="{left + plot_w - 126}" y2="{ly - 4}" stroke="{color}" '
            f'stroke-width="2.5"/>'
        )
        parts.append(
            f'<text x="{left + plot_w - 120}" y="{ly}" '
            f'font-family="sans-serif" font-size="11">{_escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )

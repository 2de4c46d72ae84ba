"""Dependency-free static SVG line and bar charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_W, _H = 480, 320
_L, _R, _T, _B = 60, 20, 30, 45
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _bounds(values):
    vals = [v for v in values if math.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _frame(title, xlabel, ylabel, xb, yb, body):
    x0, x1 = xb
    y0, y1 = yb
    pw, ph = _W - _L - _R, _H - _T - _B
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="14" y="{_T + ph / 2}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {_T + ph / 2})">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        px = _L + pw * k / 4
        py = _T + ph - ph * k / 4
        out.append(f'<text x="{px:.1f}" y="{_T + ph + 14}" text-anchor="middle" font-size="9">{_fmt(fx)}</text>')
        out.append(f'<text x="{_L - 4}" y="{py + 3:.1f}" text-anchor="end" font-size="9">{_fmt(fy)}</text>')
    out.extend(body)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _project(xb, yb):
    pw, ph = _W - _L - _R, _H - _T - _B

    def f(x, y):
        return _L + pw * (x - xb[0]) / (xb[1] - xb[0]), _T + ph - ph * (y - yb[0]) / (yb[1] - yb[0])

    return f


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, hlines: dict | None = None) -> str:
    """``series`` maps a label to a list of (x, y) points."""
    hlines = hlines or {}
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts] + list(hlines.values())
    xb, yb = _bounds(xs), _bounds(ys)
    proj = _project(xb, yb)
    body = []
    for k, (label, pts) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        coords = [proj(x, y) for x, y in pts if math.isfinite(y)]
        if coords:
            path = " ".join(f"{px:.1f},{py:.1f}" for px, py in coords)
            body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            body.extend(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.5" fill="{color}"/>' for px, py in coords)
        body.append(f'<text x="{_W - _R - 4}" y="{_T + 14 + 13 * k}" text-anchor="end" font-size="10" fill="{color}">{escape(label)}</text>')
    for k, (label, y) in enumerate(hlines.items()):
        _, py = proj(xb[0], y)
        body.append(f'<line x1="{_L}" x2="{_W - _R}" y1="{py:.1f}" y2="{py:.1f}" stroke="red" stroke-dasharray="4 3"/>')
        body.append(f'<text x="{_L + 4}" y="{py - 3:.1f}" font-size="10" fill="red">{escape(label)}</text>')
    return _frame(title, xlabel, ylabel, xb, yb, body)


def bar_chart(values, counts, title: str, xlabel: str, ylabel: str) -> str:
    xb = _bounds([v - 0.5 for v in values] + [v + 0.5 for v in values])
    yb = (0.0, max(counts) * 1.05 if counts else 1.0)
    proj = _project(xb, yb)
    body = []
    for v, c in zip(values, counts):
        x0, y0 = proj(v - 0.4, c)
        x1, y1 = proj(v + 0.4, 0)
        body.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" height="{y1 - y0:.1f}" fill="{_COLORS[0]}"/>')
    return _frame(title, xlabel, ylabel, xb, yb, body)

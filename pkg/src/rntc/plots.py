"""Minimal deterministic SVG emitter: axes, polylines, scatter markers, legend."""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 60, 120, 30, 45
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _range(vals: Sequence[float]) -> tuple[float, float]:
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Canvas:
    def __init__(self, xr, yr, title, xlabel, ylabel):
        self.xr, self.yr = xr, yr
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        ]
        x0, x1, y0, y1 = LEFT, W - RIGHT, H - BOTTOM, TOP
        self.parts.append(f'<path d="M{x0} {y1}V{y0}H{x1}" stroke="black" fill="none"/>')
        for t in _ticks(*xr):
            px = self.px(t)
            self.parts.append(f'<text x="{px:.1f}" y="{y0 + 14}" text-anchor="middle">{t:.3g}</text>')
        for t in _ticks(*yr):
            py = self.py(t)
            self.parts.append(f'<text x="{x0 - 5}" y="{py + 4:.1f}" text-anchor="end">{t:.3g}</text>')
        self.parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{H - 8}" text-anchor="middle">'
                          f'{escape(xlabel)}</text>')
        self.parts.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
                          f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>')
        self.n_legend = 0

    def px(self, x):
        lo, hi = self.xr
        return LEFT + (x - lo) / (hi - lo) * (W - RIGHT - LEFT)

    def py(self, y):
        lo, hi = self.yr
        return H - BOTTOM - (y - lo) / (hi - lo) * (H - BOTTOM - TOP)

    def legend(self, label, color):
        y = TOP + 14 * self.n_legend + 6
        x = W - RIGHT + 10
        self.parts.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        self.parts.append(f'<text x="{x + 14}" y="{y + 1}">{escape(label)}</text>')
        self.n_legend += 1

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys)
                       if math.isfinite(y))
        self.parts.append(f'<polyline points="{pts}" stroke="{color}" fill="none" stroke-width="1.5"/>')
        self.markers(xs, ys, color)

    def markers(self, xs, ys, color):
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                self.parts.append(f'<circle cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" r="3" '
                                  f'fill="{color}"/>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>", ""])


def line_plot(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
              xlabel: str = "", ylabel: str = "") -> str:
    xs = [x for s in series.values() for x in s[0]]
    ys = [y for s in series.values() for y in s[1]]
    cv = _Canvas(_range(xs), _range(ys), title, xlabel, ylabel)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        cv.polyline(sx, sy, color)
        cv.legend(name, color)
    return cv.svg()


def scatter_plot(points: Sequence[tuple[str, float, float]], title: str = "", xlabel: str = "",
                 ylabel: str = "") -> str:
    """One marker per (label, x, y); markers sharing a label share a color.

    A point with undefined x (e.g. no successful episode, so no travel time) is
    drawn as an open marker on the right edge of the axis.
    """
    cv = _Canvas(_range([p[1] for p in points]), _range([p[2] for p in points]), title, xlabel, ylabel)
    colors: dict[str, str] = {}
    for label, x, y in points:
        if label not in colors:
            colors[label] = COLORS[len(colors) % len(COLORS)]
            cv.legend(label, colors[label])
        if math.isfinite(x):
            cv.markers([x], [y], colors[label])
        elif math.isfinite(y):
            cv.parts.append(f'<circle cx="{cv.px(cv.xr[1]):.2f}" cy="{cv.py(y):.2f}" r="3" '
                            f'fill="none" stroke="{colors[label]}"/>')
    return cv.svg()

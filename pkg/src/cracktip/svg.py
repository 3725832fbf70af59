"""Minimal deterministic SVG line charts (log-scale radius axis)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


@dataclass
class LineChart:
    title: str
    xlabel: str
    ylabel: str
    logx: bool = True
    logy: bool = False
    width: int = 640
    height: int = 420
    series: list[Series] = field(default_factory=list)
    note: str = ""

    def add(self, label, x, y, dashed: bool = False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if self.logx:
            ok &= x > 0
        if self.logy:
            ok &= y > 0
        self.series.append(Series(label, x[ok], y[ok], dashed))
        return self

    def to_svg(self) -> str:
        W, H = self.width, self.height
        left, right, top, bottom = 70, 160, 36, 50
        pw, ph = W - left - right, H - top - bottom
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
            f'font-size="14">{escape(self.title)}</text>',
        ]
        xs = np.concatenate([s.x for s in self.series]) if self.series else np.zeros(0)
        ys = np.concatenate([s.y for s in self.series]) if self.series else np.zeros(0)
        out.append(
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
        )
        if len(xs) == 0:
            out.append(
                f'<text x="{left + pw / 2:.1f}" y="{top + ph / 2:.1f}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="12">{escape(self.note or "no data")}</text>'
            )
            out.append("</svg>")
            return "\n".join(out) + "\n"
        fx, x0, x1 = _axis(xs, self.logx)
        fy, y0, y1 = _axis(ys, self.logy)

        def px(v):
            return left + pw * (fx(v) - x0) / (x1 - x0)

        def py(v):
            return top + ph * (1.0 - (fy(v) - y0) / (y1 - y0))

        for t in _ticks(x0, x1, self.logx):
            X = px(t)
            out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
            out.append(
                f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                f'font-size="10">{_fmt(t)}</text>'
            )
        for t in _ticks(y0, y1, self.logy):
            Y = py(t)
            out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
            out.append(
                f'<text x="{left - 8}" y="{Y + 3:.2f}" text-anchor="end" font-family="sans-serif" '
                f'font-size="10">{_fmt(t)}</text>'
            )
        out.append(
            f'<text x="{left + pw / 2:.1f}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12">{escape(self.xlabel)}</text>'
        )
        out.append(
            f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>'
        )
        for k, s in enumerate(self.series):
            color = PALETTE[k % len(PALETTE)]
            if len(s.x):
                order = np.argsort(s.x, kind="stable")
                pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x[order], s.y[order]))
                dash = ' stroke-dasharray="5,3"' if s.dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            ly = top + 14 + 16 * k
            out.append(
                f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
            out.append(
                f'<text x="{left + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="10">'
                f"{escape(s.label)}</text>"
            )
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _axis(v, log):
    f = np.log10 if log else (lambda t: np.asarray(t, dtype=float))
    lo, hi = float(np.min(f(v))), float(np.max(f(v)))
    if hi - lo < 1e-12:
        pad = 0.5 if log else max(abs(lo) * 0.1, 1e-12)
        lo, hi = lo - pad, hi + pad
    else:
        pad = 0.04 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    return f, lo, hi


def _ticks(lo, hi, log):
    if log:
        ticks = [10.0**k for k in range(math.ceil(lo), math.floor(hi) + 1)]
        if len(ticks) < 2:
            ticks = [10.0 ** (lo + 0.05 * (hi - lo)), 10.0 ** (hi - 0.05 * (hi - lo))]
        return ticks
    step = 10 ** math.floor(math.log10((hi - lo) / 4))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def _fmt(t: float) -> str:
    if t == 0:
        return "0"
    a = abs(t)
    if a >= 1e4 or a < 1e-3:
        return f"{t:.0e}"
    return f"{t:.6g}"

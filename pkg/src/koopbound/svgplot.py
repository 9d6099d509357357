"""Minimal self-contained SVG line charts (log-scale y axis)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .exceptions import KoopboundError

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 80, "right": 180, "top": 40, "bottom": 60}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_plot(series: dict, x_label: str, title: str = "", y_label: str = "bound value") -> str:
    """Render ``{name: [(x, y), ...]}`` as an SVG polyline chart.

    Every series needs at least two points with ``y > 0``. Output is a pure
    function of the input (series are drawn in the given order).
    """
    if not series:
        raise KoopboundError("emit_plot needs at least one series")
    for name, pts in series.items():
        if len(pts) < 2:
            raise KoopboundError(f"series {name!r} needs at least two points")
        if any(not (y > 0 and math.isfinite(y)) for _, y in pts):
            raise KoopboundError(f"series {name!r} has non-positive or non-finite values (log axis)")
    xs = [float(x) for pts in series.values() for x, _ in pts]
    ys = [math.log10(y) for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        raise KoopboundError("degenerate x axis: all x values are equal")
    y_lo, y_hi = min(ys), max(ys)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * pw

    def py(ly):
        return MARGIN["top"] + (1.0 - (ly - y_lo) / (y_hi - y_lo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for x in sorted(set(xs)):
        out.append(f'<text x="{_fmt(px(x))}" y="{y0 + 18}" font-size="11" text-anchor="middle">'
                   f'{escape(f"{x:g}")}</text>')
    for k in range(math.floor(y_lo), math.ceil(y_hi) + 1):
        if y_lo - 1e-12 <= k <= y_hi + 1e-12:
            out.append(f'<text x="{x0 - 6}" y="{_fmt(py(k) + 4)}" font-size="11" '
                       f'text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{x0 + pw / 2}" y="{HEIGHT - 15}" font-size="13" '
               f'text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{MARGIN["top"] + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2})">{escape(y_label)} (log scale)</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')

    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(px(float(x)))},{_fmt(py(math.log10(y)))}" for x, y in sorted(pts))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

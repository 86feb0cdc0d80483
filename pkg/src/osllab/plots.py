"""Static SVG line plots of 1-D solution slices, written without a plotting library."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(low: float, high: float, n: int = 5) -> list:
    if not high > low:
        return [low]
    raw = (high - low) / n
    step = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if m * step >= raw:
            step *= m
            break
    start = math.ceil(low / step) * step
    return [round(v, 12) for v in np.arange(start, high + step * 1e-9, step)]


def line_plot_svg(path, x: np.ndarray, curves: Sequence[tuple], title: str, ylabel: str) -> None:
    """Write curves ``[(label, y), ...]`` over a shared ``x`` axis; NaN samples break the line."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for _, y in curves]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(1)
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(x.min()), float(x.max())
    if xhi <= xlo:
        xhi = xlo + 1.0

    def px(v):
        return MARGIN + (v - xlo) / (xhi - xlo) * (WIDTH - 2 * MARGIN)

    def py(v):
        return HEIGHT - MARGIN - (v - ylo) / (yhi - ylo) * (HEIGHT - 2 * MARGIN)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{_escape(title)}</text>',
           f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
           f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>']
    for v in _ticks(xlo, xhi):
        out.append(f'<text x="{px(v):.1f}" y="{HEIGHT - MARGIN + 15}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(ylo, yhi):
        out.append(f'<text x="{MARGIN - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">x</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2:.1f}" transform="rotate(-90 14 {HEIGHT / 2:.1f})" '
               f'text-anchor="middle">{_escape(ylabel)}</text>')
    for k, ((label, _), y) in enumerate(zip(curves, ys)):
        colour = COLOURS[k % len(COLOURS)]
        for run in _finite_runs(y):
            pts = " ".join(f"{px(x[i]):.2f},{py(y[i]):.2f}" for i in run)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN + 14 * k
        out.append(f'<line x1="{WIDTH - MARGIN - 90}" y1="{ly}" x2="{WIDTH - MARGIN - 70}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 65}" y="{ly + 4}">{_escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _finite_runs(y: np.ndarray) -> list:
    runs, cur = [], []
    for i, v in enumerate(y):
        if np.isfinite(v):
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def slice_indices(n: int, count: int = 5) -> list:
    if n <= count:
        return list(range(n))
    return sorted(set(int(round(v)) for v in np.linspace(0, n - 1, count)))

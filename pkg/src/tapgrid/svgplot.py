"""Tiny SVG 1.1 line charts for training logs, one panel per column."""
from __future__ import annotations

import csv
import io
import math
from xml.sax.saxutils import escape

PANEL_W, PANEL_H = 320, 180
MARGIN = 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def read_log(text: str) -> tuple[list, dict]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty log")
    header, body = rows[0], rows[1:]
    cols = {h: [float(r[i]) for r in body] for i, h in enumerate(header)}
    return header, cols


def _panel(name: str, xs, ys, x0: float, y0: float) -> list[str]:
    out = [f'<g transform="translate({x0:.0f},{y0:.0f})">',
           f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>',
           f'<text x="{PANEL_W / 2:.0f}" y="-6" text-anchor="middle" font-size="12">{escape(name)}</text>']
    pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        out.append(f'<text x="{PANEL_W / 2:.0f}" y="{PANEL_H / 2:.0f}" text-anchor="middle" '
                   f'font-size="11" fill="#999">no data</text></g>')
        return out
    lo_x, hi_x = min(xs), max(xs)
    lo_y, hi_y = min(y for _, y in pts), max(y for _, y in pts)
    if hi_x == lo_x:
        hi_x = lo_x + 1
    if hi_y == lo_y:
        lo_y, hi_y = lo_y - 0.5, hi_y + 0.5

    def px(x):
        return (x - lo_x) / (hi_x - lo_x) * PANEL_W

    def py(y):
        return PANEL_H - (y - lo_y) / (hi_y - lo_y) * PANEL_H

    path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
    out.append(f'<polyline points="{path}" fill="none" stroke="{COLORS[0]}" stroke-width="1.5"/>')
    for x, y in pts:
        out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2" fill="{COLORS[0]}"/>')
    out.append(f'<text x="-4" y="{PANEL_H}" text-anchor="end" font-size="10">{lo_y:.3g}</text>')
    out.append(f'<text x="-4" y="10" text-anchor="end" font-size="10">{hi_y:.3g}</text>')
    out.append(f'<text x="0" y="{PANEL_H + 14}" font-size="10">{lo_x:.6g}</text>')
    out.append(f'<text x="{PANEL_W}" y="{PANEL_H + 14}" text-anchor="end" font-size="10">{hi_x:.6g}</text>')
    out.append("</g>")
    return out


def log_to_svg(text: str, x_column: str = "step", columns=None, ncols: int = 3) -> str:
    """One panel per column of a CSV log against ``x_column``."""
    header, cols = read_log(text)
    if x_column not in cols:
        raise ValueError(f"missing x column {x_column!r}")
    names = [h for h in header if h != x_column] if columns is None else list(columns)
    nrows = max(1, math.ceil(len(names) / ncols))
    width = ncols * (PANEL_W + 2 * MARGIN)
    height = nrows * (PANEL_H + 2 * MARGIN)
    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif">']
    for i, name in enumerate(names):
        r, c = divmod(i, ncols)
        parts += _panel(name, cols[x_column], cols[name], MARGIN + c * (PANEL_W + 2 * MARGIN),
                        MARGIN + r * (PANEL_H + 2 * MARGIN))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

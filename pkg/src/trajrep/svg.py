"""Minimal SVG figure output: line plots and annotated heatmaps.

Plain hand-assembled XML, deterministic byte-for-byte for fixed inputs,
so figures can be diffed and hashed like any other artifact.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

LINE_COLORS = ["#1f6fb4", "#d1495b", "#2e8b57", "#e0a100", "#7b4fa6", "#14867d"]

_FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return raw


def _finite_or_raise(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def line_plot(path, series, title="", xlabel="", ylabel="",
              width=640, height=400):
    """Write a line plot; series is a list of (label, xs, ys) triples."""
    if not series:
        raise ValueError("no series to plot")
    parsed = []
    for label, xs, ys in series:
        xs = _finite_or_raise(f"series '{label}' x", xs)
        ys = _finite_or_raise(f"series '{label}' y", ys)
        if xs.shape != ys.shape:
            raise ValueError(f"series '{label}': x/y length mismatch")
        parsed.append((str(label), xs, ys))

    ml, mr, mt, mb = 62, 16, 34, 46
    pw, ph = width - ml - mr, height - mt - mb
    x_lo = min(float(xs.min()) for _, xs, _ in parsed)
    x_hi = max(float(xs.max()) for _, xs, _ in parsed)
    y_lo = min(float(ys.min()) for _, _, ys in parsed)
    y_hi = max(float(ys.max()) for _, _, ys in parsed)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="#ffffff"/>']
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" '
                   f'{_FONT} font-size="14">{escape(title)}</text>')

    for tv in _ticks(x_lo, x_hi):
        x = sx(tv)
        out.append(f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" y2="{mt + ph}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" text-anchor="middle" '
                   f'{_FONT} font-size="11">{_fmt(tv)}</text>')
    for tv in _ticks(y_lo, y_hi):
        y = sy(tv)
        out.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" '
                   f'{_FONT} font-size="11">{_fmt(tv)}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#444444"/>')

    for i, (label, xs, ys) in enumerate(parsed):
        color = LINE_COLORS[i % len(LINE_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6"/>')
        ly = mt + 14 + 15 * i
        out.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" x2="{ml + pw - 100}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 94}" y="{ly}" {_FONT} '
                   f'font-size="11">{escape(label)}</text>')

    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle" '
                   f'{_FONT} font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" {_FONT} '
                   f'font-size="12" transform="rotate(-90 16 {mt + ph / 2})">'
                   f'{escape(ylabel)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def _cell_color(v):
    """0 -> near white, 1 -> dark blue; simple two-segment ramp."""
    v = min(max(float(v), 0.0), 1.0)
    if v < 0.5:
        f = v / 0.5
        rgb = (247 + (107 - 247) * f, 251 + (174 - 251) * f, 255 + (214 - 255) * f)
    else:
        f = (v - 0.5) / 0.5
        rgb = (107 + (8 - 107) * f, 174 + (48 - 174) * f, 214 + (107 - 214) * f)
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def heatmap(path, matrix, row_labels=None, col_labels=None, title="",
            vmin=None, vmax=None, annotate=True, cell=42):
    """Write an annotated heatmap of a 2-d matrix."""
    m = _finite_or_raise("matrix", matrix)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-d, got shape {m.shape}")
    rows, cols = m.shape
    row_labels = [str(x) for x in (row_labels if row_labels is not None else range(rows))]
    col_labels = [str(x) for x in (col_labels if col_labels is not None else range(cols))]
    if len(row_labels) != rows or len(col_labels) != cols:
        raise ValueError("label count does not match matrix shape")
    lo = float(m.min()) if vmin is None else float(vmin)
    hi = float(m.max()) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0

    ml, mt = 86, 54
    width = ml + cols * cell + 20
    height = mt + rows * cell + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="#ffffff"/>']
    if title:
        out.append(f'<text x="{ml + cols * cell / 2}" y="20" text-anchor="middle" '
                   f'{_FONT} font-size="14">{escape(title)}</text>')
    for j, lab in enumerate(col_labels):
        out.append(f'<text x="{ml + (j + 0.5) * cell:.1f}" y="{mt - 8}" '
                   f'text-anchor="middle" {_FONT} font-size="11">{escape(lab)}</text>')
    for i, lab in enumerate(row_labels):
        out.append(f'<text x="{ml - 8}" y="{mt + (i + 0.5) * cell + 4:.1f}" '
                   f'text-anchor="end" {_FONT} font-size="11">{escape(lab)}</text>')
    for i in range(rows):
        for j in range(cols):
            v = m[i, j]
            color = _cell_color((v - lo) / span)
            x, y = ml + j * cell, mt + i * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="{color}" stroke="#ffffff" stroke-width="1"/>')
            if annotate:
                tcol = "#000000" if (v - lo) / span < 0.6 else "#ffffff"
                out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" '
                           f'text-anchor="middle" {_FONT} font-size="10" '
                           f'fill="{tcol}">{v:.2f}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path

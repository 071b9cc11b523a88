"""Tiny SVG chart writer: bar histograms, heat maps, small-multiple histograms.

No plotting stack needed; every chart is also backed by a CSV elsewhere.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")
FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _esc(text) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _doc(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="#fff"/>', *body,
                      "</svg>"]) + "\n"


def _bars(body, x0, y0, w, h, counts, color, opacity=1.0):
    counts = np.asarray(counts, dtype=float)
    top = counts.max() if counts.size and counts.max() > 0 else 1.0
    bw = w / max(len(counts), 1)
    for i, c in enumerate(counts):
        bh = h * c / top
        body.append(f'<rect x="{x0 + i * bw:.2f}" y="{y0 + h - bh:.2f}" width="{max(bw - 0.5, 0.3):.2f}" '
                    f'height="{bh:.2f}" fill="{color}" fill-opacity="{opacity}"/>')
    body.append(f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="#000"/>')


def histogram_svg(counts: Sequence[float], title: str, xlabel: str = "class",
                  width: int = 720, height: int = 320) -> str:
    body = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15" {FONT}>{_esc(title)}</text>']
    _bars(body, 50, 40, width - 70, height - 90, counts, PALETTE[0])
    body.append(f'<text x="{width / 2}" y="{height - 18}" text-anchor="middle" font-size="12" {FONT}>'
                f'{_esc(xlabel)} (0..{len(counts) - 1})</text>')
    body.append(f'<text x="14" y="{height / 2}" font-size="12" {FONT} '
                f'transform="rotate(-90 14 {height / 2})" text-anchor="middle">count</text>')
    return _doc(width, height, body)


def _heat_color(v: float) -> str:
    v = min(max(v, 0.0), 1.0)
    r = int(255 - 200 * v)
    g = int(255 - 160 * v)
    b = int(255 - 40 * v)
    return f"rgb({r},{g},{b})"


def heatmap_svg(values: np.ndarray, rows: Sequence[str], columns: Sequence[str], title: str,
                cell: int = 46) -> str:
    values = np.asarray(values, dtype=float)
    left, top = 90, 60
    width = left + cell * len(columns) + 20
    height = top + cell * len(rows) + 20
    vmax = values.max() if values.size and values.max() > 0 else 1.0
    body = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15" {FONT}>{_esc(title)}</text>']
    for j, name in enumerate(columns):
        body.append(f'<text x="{left + cell * (j + 0.5)}" y="{top - 8}" text-anchor="middle" '
                    f'font-size="12" {FONT}>{_esc(name)}</text>')
    for i, name in enumerate(rows):
        y = top + cell * i
        body.append(f'<text x="{left - 8}" y="{y + cell / 2 + 4}" text-anchor="end" font-size="12" '
                    f'{FONT}>{_esc(name)}</text>')
        for j in range(len(columns)):
            v = values[i, j]
            body.append(f'<rect x="{left + cell * j}" y="{y}" width="{cell - 1}" height="{cell - 1}" '
                        f'fill="{_heat_color(v / vmax)}"><title>{v:.4f}</title></rect>')
            body.append(f'<text x="{left + cell * (j + 0.5)}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                        f'font-size="10" {FONT}>{v:.2f}</text>')
    return _doc(width, height, body)


def grid_histograms_svg(panels: Sequence[Sequence[dict]], row_labels: Sequence[str],
                        col_labels: Sequence[str], title: str, bins: int = 20,
                        panel_w: int = 200, panel_h: int = 110) -> str:
    """Small multiples; each panel is ``{series name: values}`` overlaid on shared bins."""
    left, top, gap = 70, 60, 18
    ncols = len(col_labels)
    width = left + ncols * (panel_w + gap) + 120
    height = top + len(row_labels) * (panel_h + gap) + 20
    body = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15" {FONT}>{_esc(title)}</text>']
    names = []
    for j, name in enumerate(col_labels):
        body.append(f'<text x="{left + j * (panel_w + gap) + panel_w / 2}" y="{top - 10}" '
                    f'text-anchor="middle" font-size="12" {FONT}>{_esc(name)}</text>')
    for i, row in enumerate(panels):
        y0 = top + i * (panel_h + gap)
        body.append(f'<text x="{left - 10}" y="{y0 + panel_h / 2}" text-anchor="end" font-size="12" '
                    f'{FONT}>{_esc(row_labels[i])}</text>')
        for j, series in enumerate(row):
            x0 = left + j * (panel_w + gap)
            allv = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) \
                if series else np.zeros(1)
            lo, hi = float(allv.min()), float(allv.max())
            if hi <= lo:
                hi = lo + 1e-9
            edges = np.linspace(lo, hi, bins + 1)
            for k, (name, vals) in enumerate(series.items()):
                if name not in names:
                    names.append(name)
                counts, _ = np.histogram(vals, edges)
                dens = counts / max(counts.sum(), 1)
                _bars(body, x0, y0, panel_w, panel_h, dens, PALETTE[names.index(name) % 5], 0.55)
            body.append(f'<text x="{x0}" y="{y0 + panel_h + 12}" font-size="9" {FONT}>{lo:.3g}</text>')
            body.append(f'<text x="{x0 + panel_w}" y="{y0 + panel_h + 12}" text-anchor="end" '
                        f'font-size="9" {FONT}>{hi:.3g}</text>')
    for k, name in enumerate(names):
        y = top + 16 * k
        x = width - 110
        body.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{PALETTE[k % 5]}" fill-opacity="0.55"/>')
        body.append(f'<text x="{x + 18}" y="{y + 10}" font-size="12" {FONT}>{_esc(name)}</text>')
    return _doc(width, height, body)


def write(path, svg: str) -> None:
    with open(path, "w") as fh:
        fh.write(svg)

"""Artifact emission: standalone SVG charts, first-layer kernel sheets,
and summary tables over result JSONs.

Charts carry their data twice: drawn, and as a CSV block inside the SVG
``<desc>`` element (plus a visible table when small), so no plotting
library is needed to read the numbers back.
"""

from __future__ import annotations

import io
import json
import os

import numpy as np
from PIL import Image

from .errors import DataError

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _fmt(v):
    return f"{v:.6g}"


def _escape(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _axis(lo, hi):
    if not np.isfinite(lo) or not np.isfinite(hi):
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        pad = max(abs(lo), 1.0) * 0.1
        lo, hi = lo - pad, hi + pad
    return lo, hi


class _Svg:
    def __init__(self, height):
        self.height = height
        self.parts = []

    def add(self, text):
        self.parts.append(text)

    def line(self, x1, y1, x2, y2, color="#333", width=1, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" '
                 f'y2="{y2:.1f}" stroke="{color}" stroke-width="{width}"{d}/>')

    def text(self, x, y, s, size=12, anchor="start", color="#111", rotate=None):
        r = (f' transform="rotate(-90 {x:.1f} {y:.1f})"' if rotate else "")
        self.add(f'<text x="{x:.1f}" y="{y:.1f}" font-family="monospace" '
                 f'font-size="{size}" text-anchor="{anchor}" '
                 f'fill="{color}"{r}>{_escape(s)}</text>')

    def render(self, desc_csv, comment=None):
        head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
                f'height="{self.height}" viewBox="0 0 {_W} {self.height}">']
        if comment:
            head.append(f"<!-- {_escape(comment)} -->")
        head.append(f"<desc>{_escape(desc_csv)}</desc>")
        head.append(f'<rect width="{_W}" height="{self.height}" fill="white"/>')
        return "\n".join(head + self.parts + ["</svg>"])


def _draw_frame(svg, title, xlabel, ylabel, xlo, xhi, ylo, yhi):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    svg.text(_W / 2, 22, title, size=14, anchor="middle")
    svg.line(x0, y0, x1, y0)
    svg.line(x0, y0, x0, y1)
    svg.text((x0 + x1) / 2, _H - 12, xlabel, anchor="middle")
    svg.text(18, (y0 + y1) / 2, ylabel, anchor="middle", rotate=True)
    for i in range(5):
        fx = xlo + (xhi - xlo) * i / 4
        fy = ylo + (yhi - ylo) * i / 4
        px = x0 + (x1 - x0) * i / 4
        py = y0 - (y0 - y1) * i / 4
        svg.line(px, y0, px, y0 + 4)
        svg.text(px, y0 + 18, _fmt(fx), size=10, anchor="middle")
        svg.line(x0 - 4, py, x0, py)
        svg.text(x0 - 6, py + 4, _fmt(fy), size=10, anchor="end")
        if i:
            svg.line(x0, py, x1, py, color="#eee")

    def to_px(x, y):
        return (x0 + (x1 - x0) * (x - xlo) / (xhi - xlo),
                y0 - (y0 - y1) * (y - ylo) / (yhi - ylo))

    return to_px


def _embed_table(svg, header, rows, y_start):
    svg.text(_ML, y_start, " | ".join(header), size=11, color="#333")
    y = y_start
    for row in rows:
        y += 15
        svg.text(_ML, y, " | ".join(_fmt(v) if isinstance(v, float) else str(v)
                                    for v in row), size=11, color="#555")
    return y


def svg_line_chart(series, title, xlabel, ylabel, markers=None, path=None,
                   comment=None):
    """``series`` maps a legend label to a list of (x, y) points.
    ``markers`` maps a label to an x position drawn as a dashed vertical
    line (steady-state epochs and the like)."""
    if not series or all(not pts for pts in series.values()):
        raise DataError("nothing to plot")
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    xlo, xhi = _axis(min(xs), max(xs))
    ylo, yhi = _axis(min(ys), max(ys))

    xs_all = sorted({p[0] for pts in series.values() for p in pts})
    names = list(series)
    header = [xlabel] + names
    lookup = {name: dict(pts) for name, pts in series.items()}
    rows = [[_fmt(x)] + [(_fmt(lookup[n][x]) if x in lookup[n] else "")
                         for n in names] for x in xs_all]
    show_table = len(rows) <= 24
    height = _H + (20 + 15 * (len(rows) + 1) if show_table else 10)

    svg = _Svg(height)
    to_px = _draw_frame(svg, title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    for ci, (name, pts) in enumerate(series.items()):
        color = _PALETTE[ci % len(_PALETTE)]
        pts = sorted(pts)
        path_d = " ".join(f"{to_px(x, y)[0]:.1f},{to_px(x, y)[1]:.1f}"
                          for x, y in pts)
        svg.add(f'<polyline points="{path_d}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>')
        for x, y in pts:
            px, py = to_px(x, y)
            svg.add(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.5" '
                    f'fill="{color}"/>')
        svg.text(_W - _MR - 6, _MT + 16 + 14 * ci, name, size=11,
                 anchor="end", color=color)
    for mi, (name, x) in enumerate(sorted((markers or {}).items())):
        color = _PALETTE[names.index(name) % len(_PALETTE)] if name in names \
            else "#d62728"
        px, _ = to_px(x, ylo)
        svg.line(px, _H - _MB, px, _MT, color=color, dash="5,4")
        svg.text(px + 3, _MT + 12 + 11 * mi, f"{name}@{_fmt(x)}", size=9,
                 color=color)
    if show_table:
        _embed_table(svg, header, rows, _H + 20)

    csv_text = "\n".join([",".join(header)] + [",".join(r) for r in rows])
    out = svg.render(csv_text, comment)
    if path:
        _write(path, out)
    return out


def svg_bar_chart(labels, values, title, ylabel, errors=None, path=None,
                  comment=None):
    if len(labels) != len(values) or not labels:
        raise DataError("bar chart needs matching non-empty labels/values")
    errors = list(errors) if errors is not None else [0.0] * len(values)
    ylo = min(0.0, min(v - e for v, e in zip(values, errors)))
    yhi = max(v + e for v, e in zip(values, errors))
    ylo, yhi = _axis(ylo, yhi)

    rows = [[str(l), float(v)] for l, v in zip(labels, values)]
    height = _H + 20 + 15 * (len(rows) + 1)
    svg = _Svg(height)
    to_px = _draw_frame(svg, title, "", ylabel, 0, len(labels), ylo, yhi)
    slot = (_W - _ML - _MR) / len(labels)
    for i, (label, value) in enumerate(zip(labels, values)):
        color = _PALETTE[i % len(_PALETTE)]
        x_left = _ML + slot * (i + 0.15)
        _, y_top = to_px(0, value)
        _, y_base = to_px(0, max(ylo, 0.0))
        hgt = abs(y_base - y_top)
        svg.add(f'<rect x="{x_left:.1f}" y="{min(y_top, y_base):.1f}" '
                f'width="{slot * 0.7:.1f}" height="{hgt:.1f}" '
                f'fill="{color}" fill-opacity="0.8"/>')
        if errors[i]:
            cx = x_left + slot * 0.35
            _, y_hi = to_px(0, value + errors[i])
            _, y_lo = to_px(0, value - errors[i])
            svg.line(cx, y_lo, cx, y_hi, color="#333")
        svg.text(x_left + slot * 0.35, _H - _MB + 18, label, size=10,
                 anchor="middle")
        svg.text(x_left + slot * 0.35, min(y_top, y_base) - 5, _fmt(value),
                 size=9, anchor="middle")
    _embed_table(svg, ["label", ylabel], rows, _H + 20)
    csv_text = "\n".join(["label," + ylabel]
                         + [f"{l},{_fmt(v)}" for l, v in zip(labels, values)])
    out = svg.render(csv_text, comment)
    if path:
        _write(path, out)
    return out


def _write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Kernel sheet
# ---------------------------------------------------------------------------


def kernel_sheet(kernels, path, cols=8, upscale=14, border=2):
    """Tile first-layer kernels into a grayscale PNG grid.  Each kernel is
    min-max normalized independently so its structure is visible."""
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim == 4:  # (n, 1, k, k) conv weights
        kernels = kernels[:, 0]
    if kernels.ndim != 3:
        raise DataError(f"expected (n, k, k) kernels, got {kernels.shape}")
    n, kh, kw = kernels.shape
    rows = (n + cols - 1) // cols
    tile_h = kh * upscale + border
    tile_w = kw * upscale + border
    sheet = np.full((rows * tile_h + border, cols * tile_w + border), 32,
                    dtype=np.uint8)
    for i in range(n):
        img = kernels[i]
        lo, hi = img.min(), img.max()
        norm = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
        big = np.kron(norm, np.ones((upscale, upscale)))
        r, c = divmod(i, cols)
        y = border + r * tile_h
        x = border + c * tile_w
        sheet[y : y + kh * upscale, x : x + kw * upscale] = \
            np.round(big * 255).astype(np.uint8)
    Image.fromarray(sheet, mode="L").save(path)
    return sheet.shape


# ---------------------------------------------------------------------------
# Results summaries
# ---------------------------------------------------------------------------


def collect_results(results_dir):
    """All result JSONs (files containing an "aggregate" object) found
    under ``results_dir``, sorted by filename."""
    if not os.path.isdir(results_dir):
        raise DataError(f"results directory not found: {results_dir}")
    found = []
    for name in sorted(os.listdir(results_dir)):
        if not name.endswith(".json"):
            continue
        full = os.path.join(results_dir, name)
        try:
            with open(full, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(obj, dict) and "aggregate" in obj:
            found.append((name, obj))
    return found


def summary_report(results_dir, out_prefix=None):
    """Aggregate result JSONs into an aligned text table and a CSV.
    Returns the text table."""
    results = collect_results(results_dir)
    if not results:
        raise DataError(f"no result files in {results_dir}")
    header = ["file", "task", "ablation", "mean_mcc", "std_mcc",
              "mean_accuracy", "config_hash"]
    rows = []
    for name, obj in results:
        agg = obj["aggregate"]
        accs = [f["accuracy"] for f in obj.get("per_fold", [])]
        rows.append([
            name,
            str(obj.get("task", "")),
            str(obj.get("ablation", "")),
            f"{agg['mean_mcc']:.4f}",
            f"{agg['std_mcc']:.4f}",
            f"{np.mean(accs):.4f}" if accs else "",
            obj.get("config_hash", ""),
        ])
    widths = [max(len(header[i]), max(len(r[i]) for r in rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths))
              for row in rows]
    text = "\n".join(lines)
    if out_prefix:
        _write(out_prefix + ".txt", text + "\n")
        csv_text = "\n".join([",".join(header)]
                             + [",".join(r) for r in rows])
        _write(out_prefix + ".csv", csv_text + "\n")
    return text

"""Deterministic table, plot and manifest writers."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

CSV_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


def fmt_value(v) -> str:
    """17 significant digits for floats so that the text round-trips exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else fmt_value(v)
    return str(v)


def _rows(columns, data):
    if isinstance(data, np.ndarray):
        if data.ndim != 2 or data.shape[1] != len(columns):
            raise ValueError("table shape does not match columns")
        return data.tolist()
    rows = [list(r) for r in data]
    for r in rows:
        if len(r) != len(columns):
            raise ValueError("row length does not match columns")
    return rows


def write_table(path, columns, data, fmt="csv") -> Path:
    """Write ``data`` (2-D array or row list) as CSV or JSON; returns the path."""
    path = Path(path).with_suffix("." + fmt)
    rows = _rows(columns, data)
    if fmt == "csv":
        lines = [",".join(columns)]
        lines += [",".join(fmt_value(v) for v in r) for r in rows]
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        obj = {"schema_version": CSV_SCHEMA_VERSION, "columns": list(columns),
               "rows": [[_json_value(v) for v in r] for r in rows]}
        text = json.dumps(obj, indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def read_csv(path):
    """Return ``(header, rows)`` with floats parsed; strings left as is."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = []
        for cell in line.split(","):
            try:
                row.append(float(cell))
            except ValueError:
                row.append(cell)
        rows.append(row)
    return header, rows


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _thin(x, y, max_points):
    if x.size <= max_points:
        return x, y
    stride = int(math.ceil(x.size / max_points))
    return x[::stride], y[::stride]


def svg_plot(path, series, title="", xlabel="", ylabel="", kind="line",
             width=720, height=420, max_points=6000) -> Path:
    """Minimal SVG line or scatter plot of ``series = [(label, x, y), ...]``."""
    path = Path(path).with_suffix(".svg")
    colors = ("#1f4e9c", "#c0392b", "#27864a", "#8e44ad", "#d68910", "#5d6d7e")
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = [np.asarray(s[1], float) for s in series]
    ys = [np.asarray(s[2], float) for s in series]
    finite = [v[np.isfinite(v)] for v in xs + ys]
    allx = np.concatenate([v for v in finite[:len(xs)]] + [np.zeros(0)])
    ally = np.concatenate([v for v in finite[len(xs):]] + [np.zeros(0)])
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = 0.5 * max(abs(y0), 1e-12)
        y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="13">'
        f"{escape(xlabel)}</text>",
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                   f'font-size="11">{fx:.4g}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end" '
                   f'font-size="11">{fy:.4g}</text>')
    for n, ((label, _, _), x, y) in enumerate(zip(series, xs, ys)):
        color = colors[n % len(colors)]
        ok = np.isfinite(x) & np.isfinite(y)
        x, y = _thin(x[ok], y[ok], max_points)
        if kind == "scatter":
            out += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="1.2" fill="{color}"/>'
                    for a, b in zip(x, y)]
        elif x.size:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        if label:
            out.append(f'<text x="{ml + pw - 8}" y="{mt + 16 + 15 * n}" text-anchor="end" '
                       f'font-size="12" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def write_manifest(out_dir, manifest: dict) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if obj is None or isinstance(obj, str):
        return obj
    return _json_value(obj)

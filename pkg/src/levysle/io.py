"""Deterministic CSV, JSON and SVG writers.

CSV: header row, '.' decimal, '\\n' line endings, floats in ``repr`` form.
JSON: sorted keys, two-space indent.  SVG: fixed precision, elements in a
fixed order, no timestamps.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .reports import to_jsonable

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "sha256_file",
    "path_to_csv",
    "jumps_to_json",
    "chain_to_json",
    "hull_to_csv",
    "trace_to_csv",
    "trace_svg",
    "comb_svg",
    "comb_to_csv",
]


def fmt(v) -> str:
    """Locale-independent shortest round-trip formatting."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def path_to_csv(path_obj, file) -> Path:
    return write_csv(file, ["time", "value"], zip(path_obj.grid, path_obj.values))


def jumps_to_json(path_obj, file, meta=None) -> Path:
    return write_json(file, {"meta": dict(path_obj.meta, **(meta or {})), "cutoff": path_obj.cutoff,
                             "jumps": [{"time": float(t), "size": float(s)}
                                       for t, s in zip(path_obj.jump_times, path_obj.jump_sizes)]})


def chain_to_json(chain, file) -> Path:
    return write_json(file, {"steps": chain.to_json_steps(), "end_value": chain.end_value})


def hull_to_csv(hull, file) -> Path:
    """Columns x, y, zeta_lo, zeta_hi, alive (the swallow time is exact for the chain, so lo = hi)."""
    X, Y = np.meshgrid(hull.xs, hull.ys)
    rows = []
    for x, y, sw, z in zip(X.ravel(), Y.ravel(), hull.swallowed.ravel(), hull.zeta.ravel()):
        rows.append((x, y, z if sw else math.inf, z if sw else math.inf, not sw))
    return write_csv(file, ["x", "y", "zeta_lo", "zeta_hi", "alive"], rows)


def trace_to_csv(curve, file) -> Path:
    rows = [(s.t, s.point.real, s.point.imag, s.depth, s.deriv_mag, s.converged) for s in curve.samples]
    return write_csv(file, ["t", "re", "im", "depth", "deriv_mag", "converged"], rows)


def _f(v, nd=4) -> str:
    s = f"{float(v):.{nd}f}"
    return "0.0000" if s in ("-0.0000",) else s


def _svg(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n")


def trace_svg(file, points, hull=None, width: int = 600, height: int = 400, scale: float | None = None,
              jumps_break=None) -> Path:
    """Trace polyline (broken at the indices in ``jumps_break``) over an optional hull raster."""
    pts = np.asarray(points, dtype=complex)
    xs = pts.real
    ys = pts.imag
    xmin, xmax = float(min(xs.min(), -1e-9)), float(max(xs.max(), 1e-9))
    ymax = float(max(ys.max(), 1e-9))
    if hull is not None:
        xmin, xmax = min(xmin, hull.xs.min()), max(xmax, hull.xs.max())
        ymax = max(ymax, hull.ys.max())
    pad = 0.05 * max(xmax - xmin, ymax)
    if scale is None:
        scale = min(width / (xmax - xmin + 2 * pad), height / (ymax + 2 * pad))

    def X(x):
        return (x - xmin + pad) * scale

    def Y(y):
        return height - (y + pad) * scale

    body = [f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<line x1="0" y1="{_f(Y(0))}" x2="{width}" y2="{_f(Y(0))}" stroke="#888" stroke-width="1"/>']
    if hull is not None:
        res = float(hull.ys[1] - hull.ys[0]) if hull.ys.size > 1 else 0.01
        w = _f(res * scale)
        iy, ix = np.nonzero(hull.swallowed)
        for j, i in sorted(zip(iy.tolist(), ix.tolist())):
            body.append(f'<rect x="{_f(X(hull.xs[i] - res / 2))}" y="{_f(Y(hull.ys[j] + res / 2))}" '
                        f'width="{w}" height="{w}" fill="#cfe0f3"/>')
    breaks = sorted(set(jumps_break or []))
    segments = np.split(np.arange(pts.size), breaks) if breaks else [np.arange(pts.size)]
    for seg in segments:
        if seg.size < 2:
            continue
        coords = " ".join(f"{_f(X(xs[i]))},{_f(Y(ys[i]))}" for i in seg)
        body.append(f'<polyline points="{coords}" fill="none" stroke="#b2182b" stroke-width="1.2"/>')
    path = Path(file)
    path.write_text(_svg(width, height, body), encoding="utf-8", newline="\n")
    return path


def comb_to_csv(samples, file) -> Path:
    """``samples``: iterable of (t, x, y)."""
    return write_csv(file, ["t", "x", "y"], samples)


def comb_svg(file, samples, max_tooth: int = 32, width: int = 500, height: int = 500) -> Path:
    """The comb D (grey) and curve samples coloured by time (blue to red)."""
    pad = 20
    s = min(width, height) - 2 * pad

    def X(x):
        return pad + x * s

    def Y(y):
        return height - pad - y * s

    body = [f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<line x1="{_f(X(0))}" y1="{_f(Y(0))}" x2="{_f(X(1))}" y2="{_f(Y(0))}" stroke="#bbb" stroke-width="2"/>',
            f'<line x1="{_f(X(0))}" y1="{_f(Y(0))}" x2="{_f(X(0))}" y2="{_f(Y(1))}" stroke="#bbb" stroke-width="2"/>']
    for n in range(1, max_tooth + 1):
        body.append(f'<line x1="{_f(X(1 / n))}" y1="{_f(Y(0))}" x2="{_f(X(1 / n))}" y2="{_f(Y(1))}" '
                    f'stroke="#bbb" stroke-width="2"/>')
    for t, x, y in sorted(samples):
        u = float(t) / 2.0
        col = f"#{int(255 * u):02x}30{int(255 * (1 - u)):02x}"
        body.append(f'<circle cx="{_f(X(x))}" cy="{_f(Y(y))}" r="1.2" fill="{col}"/>')
    path = Path(file)
    path.write_text(_svg(width, height, body), encoding="utf-8", newline="\n")
    return path

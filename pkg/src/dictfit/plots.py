"""Minimal byte-deterministic SVG line plots and 8-bit PGM maps."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f")
W, H = 480, 360
ML, MR, MT, MB = 64, 16, 28, 48


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo, hi):
    """Evenly spaced ticks in (possibly log-transformed) axis units."""
    step = 10 ** math.floor(math.log10(max(hi - lo, 1e-12)))
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-6, step))


def svg_curves(curves, path=None, *, title="", xlabel="", ylabel="", logx=True,
               logy=True, hlines=()) -> str:
    """Line plot of ``curves``: a list of ``(label, x, y)``.

    ``hlines`` is a list of ``(label, y)`` horizontal reference lines. An
    empty curve list yields axes only. Returns the SVG text and writes it to
    ``path`` when given.
    """
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    xs, ys = [], []
    for _, x, y in curves:
        for a, b in zip(x, y):
            if (not logx or a > 0) and (not logy or b > 0) and np.isfinite(a) and np.isfinite(b):
                xs.append(tx(a))
                ys.append(ty(b))
    ys += [ty(v) for _, v in hlines if (not logy or v > 0)]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - ML - MR, H - MT - MB

    def px(v):
        return ML + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MT + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{W / 2}" y="16" text-anchor="middle">{title}</text>')
    if xlabel:
        out.append(f'<text x="{ML + pw / 2}" y="{H - 8}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{MT + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {MT + ph / 2})">{ylabel}</text>')
    for t in _ticks(x0, x1):
        lab = f"{10 ** t:g}" if logx else f"{t:g}"
        out.append(f'<line x1="{_fmt(px(t))}" y1="{MT + ph}" x2="{_fmt(px(t))}" '
                   f'y2="{MT + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{MT + ph + 16}" text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1):
        lab = f"{10 ** t:.0e}" if logy else f"{t:g}"
        out.append(f'<line x1="{ML - 4}" y1="{_fmt(py(t))}" x2="{ML}" y2="{_fmt(py(t))}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{lab}</text>')
    for i, (label, v) in enumerate(hlines):
        if logy and v <= 0:
            continue
        y = _fmt(py(ty(v)))
        out.append(f'<line x1="{ML}" y1="{y}" x2="{ML + pw}" y2="{y}" stroke="black" '
                   f'stroke-dasharray="5,4"/>')
        out.append(f'<text x="{ML + pw - 4}" y="{float(y) - 4:.2f}" text-anchor="end">{label}</text>')
    for i, (label, x, y) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = [f"{_fmt(px(tx(a)))},{_fmt(py(ty(b)))}" for a, b in zip(x, y)
               if (not logx or a > 0) and (not logy or b > 0) and np.isfinite(a) and np.isfinite(b)]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{" ".join(pts)}"/>')
        ly = MT + 14 + 14 * i
        out.append(f'<line x1="{ML + 8}" y1="{ly - 4}" x2="{ML + 24}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{ML + 28}" y="{ly}">{label}</text>')
    out.append("</svg>\n")
    text = "\n".join(out)
    if path is not None:
        Path(path).write_text(text)
    return text


def pgm_bytes(image, window) -> bytes:
    """Binary 8-bit PGM with values mapped linearly from ``window`` to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("map must be two-dimensional")
    lo, hi = window
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    scaled = np.where(np.isfinite(scaled), scaled, 0.0)
    pix = np.rint(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + pix.tobytes()


def emit_map(image, path, window) -> None:
    """Write ``path`` (PGM) and a raw little-endian float32 sidecar ``path + '.f32'``."""
    path = Path(path)
    path.write_bytes(pgm_bytes(image, window))
    Path(str(path) + ".f32").write_bytes(np.asarray(image, dtype="<f4").tobytes())

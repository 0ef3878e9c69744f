"""Minimal self-contained SVG line charts built directly from data series."""

from __future__ import annotations

import math
from pathlib import Path

__all__ = ["line_chart"]

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 28, 44
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf"]


def _fmt(v):
    return f"{v:.3f}"


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def line_chart(series, path, *, title="", x_label="t", y_label="",
               log_y=False, width=760, height=520):
    """Write polyline series to an SVG file.

    ``series`` is a list of dicts with keys ``id``, ``x``, ``y`` and an
    optional ``color``/``dash``.  With ``log_y`` the y values are plotted as
    log10 (clamped at 1e-300).  Each polyline carries its id attribute so
    the emitted data can be checked programmatically.
    """
    if not series:
        raise ValueError("need at least one series")
    prepared = []
    for i, s in enumerate(series):
        xs = [float(v) for v in s["x"]]
        ys = [float(v) for v in s["y"]]
        if log_y:
            ys = [math.log10(max(v, 1e-300)) for v in ys]
        prepared.append({
            "id": s["id"],
            "x": xs,
            "y": ys,
            "color": s.get("color", _PALETTE[i % len(_PALETTE)]),
            "dash": s.get("dash"),
        })
    x_lo = min(min(s["x"]) for s in prepared)
    x_hi = max(max(s["x"]) for s in prepared)
    y_lo = min(min(s["y"]) for s in prepared)
    y_hi = max(max(s["y"]) for s in prepared)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def sx(v):
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return _MARGIN_T + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    for tv in _ticks(x_lo, x_hi):
        px = sx(tv)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{_MARGIN_T + plot_h}" x2="{_fmt(px)}" '
            f'y2="{_MARGIN_T + plot_h + 5}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{_MARGIN_T + plot_h + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{tv:.3g}</text>'
        )
    for tv in _ticks(y_lo, y_hi):
        py = sy(tv)
        label = f"1e{tv:.2g}" if log_y else f"{tv:.3g}"
        parts.append(
            f'<line x1="{_MARGIN_L - 5}" y1="{_fmt(py)}" x2="{_MARGIN_L}" '
            f'y2="{_fmt(py)}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{_fmt(py + 3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{label}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{x_label}</text>'
    )
    if y_label:
        ylab = f"log10 {y_label}" if log_y else y_label
        parts.append(
            f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11" '
            f'transform="rotate(-90 14 {height / 2:.0f})">{ylab}</text>'
        )
    for i, s in enumerate(prepared):
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(s["x"], s["y"]))
        dash = f' stroke-dasharray="{s["dash"]}"' if s["dash"] else ""
        parts.append(
            f'<polyline id="{s["id"]}" fill="none" stroke="{s["color"]}" '
            f'stroke-width="1.5"{dash} points="{pts}"/>'
        )
        ly = _MARGIN_T + 14 + 14 * i
        parts.append(
            f'<text x="{width - _MARGIN_R - 8}" y="{ly}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10" fill="{s["color"]}">{s["id"]}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")

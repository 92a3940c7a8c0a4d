"""Tiny deterministic SVG chart emitters.

Hand-rolled on purpose: the report artifacts must be byte-stable across runs
and diffable, which rules out plotting libraries with embedded ids or version
strings.  Geometry only depends on the data passed in.
"""

from __future__ import annotations

from typing import Sequence

WIDTH = 640
HEIGHT = 400
MARGIN = 60

__all__ = ["bar_chart", "line_chart", "scatter_chart"]


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="monospace">{title}</text>',
    ]


def _axes(x_label: str, y_label: str) -> list[str]:
    x0, y0 = MARGIN, HEIGHT - MARGIN
    x1, y1 = WIDTH - MARGIN, MARGIN
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 16}" text-anchor="middle" font-size="12" '
        f'font-family="monospace">{x_label}</text>',
        f'<text x="18" y="{(y0 + y1) // 2}" text-anchor="middle" font-size="12" '
        f'font-family="monospace" transform="rotate(-90 18 {(y0 + y1) // 2})">{y_label}</text>',
    ]


def _scale(values: Sequence[float], lo_px: float, hi_px: float,
           floor: float | None = None) -> tuple[float, float, float]:
    vmin = min(values) if floor is None else floor
    vmax = max(values)
    if vmax <= vmin:
        vmax = vmin + 1.0
    k = (hi_px - lo_px) / (vmax - vmin)
    return vmin, vmax, k


def bar_chart(labels: Sequence[str], values: Sequence[float],
              title: str, y_label: str) -> str:
    """Vertical bars, one per label, y axis anchored at 0."""
    parts = _header(title) + _axes("task", y_label)
    x0, y0 = MARGIN, HEIGHT - MARGIN
    vmin, vmax, k = _scale(list(values) + [0.0], 0.0, y0 - MARGIN, floor=0.0)
    span = WIDTH - 2 * MARGIN
    n = max(len(labels), 1)
    slot = span / n
    bar_w = slot * 0.6
    for i, (label, value) in enumerate(zip(labels, values)):
        x = x0 + i * slot + (slot - bar_w) / 2
        h = (value - vmin) * k
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y0 - h)}" width="{_fmt(bar_w)}" '
            f'height="{_fmt(h)}" fill="steelblue"/>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{y0 + 16}" text-anchor="middle" '
            f'font-size="11" font-family="monospace">{label}</text>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(y0 - h - 4)}" text-anchor="middle" '
            f'font-size="10" font-family="monospace">{_fmt(value)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart(xs: Sequence[float], ys: Sequence[float],
               title: str, x_label: str, y_label: str) -> str:
    """Single polyline through (xs, ys)."""
    parts = _header(title) + _axes(x_label, y_label)
    x0, y0 = MARGIN, HEIGHT - MARGIN
    xmin, xmax, kx = _scale(xs, 0.0, WIDTH - 2 * MARGIN)
    ymin, ymax, ky = _scale(ys, 0.0, y0 - MARGIN)
    pts = " ".join(
        f"{_fmt(x0 + (x - xmin) * kx)},{_fmt(y0 - (y - ymin) * ky)}"
        for x, y in zip(xs, ys)
    )
    parts.append(f'<polyline points="{pts}" fill="none" stroke="firebrick" stroke-width="1.5"/>')
    parts.append(
        f'<text x="{WIDTH - MARGIN}" y="{MARGIN - 8}" text-anchor="end" font-size="10" '
        f'font-family="monospace">min={_fmt(min(ys))} max={_fmt(max(ys))}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_chart(xs: Sequence[float], ys: Sequence[float], labels: Sequence[str],
                  title: str, x_label: str, y_label: str) -> str:
    """Labeled points."""
    parts = _header(title) + _axes(x_label, y_label)
    x0, y0 = MARGIN, HEIGHT - MARGIN
    xmin, xmax, kx = _scale(xs, 0.0, WIDTH - 2 * MARGIN)
    ymin, ymax, ky = _scale(ys, 0.0, y0 - MARGIN)
    for x, y, label in zip(xs, ys, labels):
        px = x0 + (x - xmin) * kx
        py = y0 - (y - ymin) * ky
        parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="4" fill="darkgreen"/>')
        parts.append(
            f'<text x="{_fmt(px + 6)}" y="{_fmt(py - 6)}" font-size="10" '
            f'font-family="monospace">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

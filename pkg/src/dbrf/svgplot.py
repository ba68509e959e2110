"""Dependency-free SVG charts for experiment outputs.

Byte-deterministic for fixed input: no timestamps, fixed float formatting,
stable iteration order. Only the two chart shapes the experiment driver
needs: multi-series line charts (metric vs. flip rate) and group-colored
scatters (representation projections).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

PALETTE = ("#1b6ca8", "#d1495b", "#3a7d44", "#8a5a83", "#c88719", "#5c5f66")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=62, right=18, top=22, bottom=46)


@dataclass
class Series:
    label: str
    xs: list[float] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise ConfigurationError(f"series {self.label!r}: x/y length mismatch")
        if len(self.xs) == 0:
            raise ConfigurationError(f"series {self.label!r} is empty")
        if not all(math.isfinite(v) for v in list(self.xs) + list(self.ys)):
            raise ConfigurationError(f"series {self.label!r} contains non-finite values")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v == v else "nan"


def _coord(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


class _Canvas:
    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        if x_hi <= x_lo:
            x_lo, x_hi = x_lo - 0.5, x_lo + 0.5
        if y_hi <= y_lo:
            y_lo, y_hi = y_lo - 0.5, y_lo + 0.5
        pad = 0.05 * (y_hi - y_lo)
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo - pad, y_hi + pad
        self.plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x: float) -> float:
        return MARGIN["left"] + (x - self.x_lo) / (self.x_hi - self.x_lo) * self.plot_w

    def py(self, y: float) -> float:
        return MARGIN["top"] + (self.y_hi - y) / (self.y_hi - self.y_lo) * self.plot_h


def _frame(canvas: _Canvas, x_label: str, y_label: str, title: str) -> list[str]:
    out = []
    left, top = MARGIN["left"], MARGIN["top"]
    right = WIDTH - MARGIN["right"]
    bottom = HEIGHT - MARGIN["bottom"]
    out.append(f'<rect x="{left}" y="{top}" width="{canvas.plot_w}" '
               f'height="{canvas.plot_h}" fill="none" stroke="#444" stroke-width="1"/>')
    for tx in _ticks(canvas.x_lo, canvas.x_hi):
        px = canvas.px(tx)
        out.append(f'<line x1="{_coord(px)}" y1="{bottom}" x2="{_coord(px)}" '
                   f'y2="{bottom + 5}" stroke="#444"/>')
        out.append(f'<text x="{_coord(px)}" y="{bottom + 18}" text-anchor="middle" '
                   f'font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(canvas.y_lo, canvas.y_hi):
        py = canvas.py(ty)
        out.append(f'<line x1="{left - 5}" y1="{_coord(py)}" x2="{left}" '
                   f'y2="{_coord(py)}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{_coord(py + 4)}" text-anchor="end" '
                   f'font-size="11">{_fmt(ty)}</text>')
    out.append(f'<text x="{(left + right) // 2}" y="{HEIGHT - 10}" '
               f'text-anchor="middle" font-size="12">{x_label}</text>')
    out.append(f'<text x="16" y="{(top + bottom) // 2}" text-anchor="middle" '
               f'font-size="12" transform="rotate(-90 16 {(top + bottom) // 2})">'
               f'{y_label}</text>')
    if title:
        out.append(f'<text x="{(left + right) // 2}" y="15" text-anchor="middle" '
                   f'font-size="13" font-weight="bold">{title}</text>')
    return out


def _document(body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      *body, "</svg>"]) + "\n"


def emit_svg_linechart(series: list[Series], x_label: str = "", y_label: str = "",
                       title: str = "", reference_y: float | None = None,
                       reference_label: str = "") -> str:
    """Multi-series line chart with markers, ticks, legend, and an optional
    horizontal reference line."""
    if not series:
        raise ConfigurationError("no series to plot")
    xs = [x for s in series for x in s.xs]
    ys = [y for s in series for y in s.ys]
    if reference_y is not None:
        if not math.isfinite(reference_y):
            raise ConfigurationError("reference_y must be finite")
        ys = ys + [reference_y]
    canvas = _Canvas(min(xs), max(xs), min(ys), max(ys))
    body = _frame(canvas, x_label, y_label, title)
    if reference_y is not None:
        py = canvas.py(reference_y)
        body.append(f'<line x1="{MARGIN["left"]}" y1="{_coord(py)}" '
                    f'x2="{WIDTH - MARGIN["right"]}" y2="{_coord(py)}" '
                    f'stroke="#777" stroke-dasharray="6 4"/>')
        if reference_label:
            body.append(f'<text x="{WIDTH - MARGIN["right"] - 4}" '
                        f'y="{_coord(py - 5)}" text-anchor="end" font-size="11" '
                        f'fill="#555">{reference_label}</text>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(zip(s.xs, s.ys))
        path = " ".join(f"{_coord(canvas.px(x))},{_coord(canvas.py(y))}" for x, y in pts)
        if len(pts) > 1:
            body.append(f'<polyline points="{path}" fill="none" stroke="{color}" '
                        f'stroke-width="1.8"/>')
        for x, y in pts:
            body.append(f'<circle cx="{_coord(canvas.px(x))}" '
                        f'cy="{_coord(canvas.py(y))}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 14 + 16 * i
        lx = WIDTH - MARGIN["right"] - 150
        body.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                    f'stroke="{color}" stroke-width="1.8"/>')
        body.append(f'<text x="{lx + 28}" y="{ly}" font-size="11">{s.label}</text>')
    return _document(body)


def emit_svg_scatter(coords: np.ndarray, group: np.ndarray,
                     group_labels: tuple[str, str] = ("protected", "privileged"),
                     x_label: str = "component 1", y_label: str = "component 2",
                     title: str = "") -> str:
    """Two-group scatter of 2-d coordinates; group=1 first in the legend."""
    coords = np.asarray(coords, dtype=float)
    group = np.asarray(group)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ConfigurationError("coords must be (n, 2)")
    if coords.shape[0] == 0:
        raise ConfigurationError("no points to plot")
    if coords.shape[0] != group.shape[0]:
        raise ConfigurationError("coords and group must align")
    if not np.isfinite(coords).all():
        raise ConfigurationError("coords contain non-finite values")
    canvas = _Canvas(float(coords[:, 0].min()), float(coords[:, 0].max()),
                     float(coords[:, 1].min()), float(coords[:, 1].max()))
    body = _frame(canvas, x_label, y_label, title)
    mask = group.astype(bool)
    for flag, label, color in ((True, group_labels[0], PALETTE[1]),
                               (False, group_labels[1], PALETTE[0])):
        sel = coords[mask == flag]
        for x, y in sel:
            body.append(f'<circle cx="{_coord(canvas.px(x))}" '
                        f'cy="{_coord(canvas.py(y))}" r="2.4" fill="{color}" '
                        f'fill-opacity="0.55"/>')
    for i, (label, color) in enumerate(zip(group_labels, (PALETTE[1], PALETTE[0]))):
        ly = MARGIN["top"] + 14 + 16 * i
        lx = WIDTH - MARGIN["right"] - 150
        body.append(f'<circle cx="{lx + 10}" cy="{ly - 4}" r="3.5" fill="{color}"/>')
        body.append(f'<text x="{lx + 22}" y="{ly}" font-size="11">{label}</text>')
    return _document(body)

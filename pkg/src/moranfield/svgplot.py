"""Deterministic, dependency-free SVG charts.

Every coordinate is written with 6 significant digits and no element
depends on anything but the input data, so identical inputs produce
byte-identical files. Data-space geometry (curves, bands, arrows,
attractor circles) lives inside one <g> whose transform maps data
coordinates to pixels with the y axis flipped; `vector-effect:
non-scaling-stroke` keeps stroke widths in pixel units. Markers, axes
and text are emitted directly in pixel coordinates.

Field arrows are emitted as `<path class="arrow" d="M x y l dx dy">`
with the displacement already multiplied by the plot's arrow scale, so
the drawn geometry can be parsed back and checked against the exported
field table.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ._util import fmt_sig

PALETTE = ("#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")
GRAY = "#9aa0a6"
DARK = "#202124"
SIGNIFICANT = "#1a5fb4"
INSIGNIFICANT = "#b8bdc4"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] at a 1/2/2.5/5 step."""
    if not (hi > lo):
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * mag
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _runs(mask: np.ndarray):
    """Contiguous index runs where mask is True."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return
    cuts = np.flatnonzero(np.diff(idx) > 1)
    start = 0
    for c in list(cuts) + [len(idx) - 1]:
        yield idx[start:c + 1]
        start = c + 1


class SvgChart:
    """One chart: pixel frame, data window, axes, and two element layers."""

    def __init__(self, x_range: tuple[float, float], y_range: tuple[float, float],
                 width: int = 720, height: int = 540, title: str = "",
                 xlabel: str = "", ylabel: str = "", equal_aspect: bool = False):
        self.width = width
        self.height = height
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self._ml, self._mr = 64, 18
        self._mt, self._mb = 40 if title else 20, 52
        self.pw = width - self._ml - self._mr
        self.ph = height - self._mt - self._mb
        x0, x1 = float(x_range[0]), float(x_range[1])
        y0, y1 = float(y_range[0]), float(y_range[1])
        if not (x1 > x0):
            x0, x1 = x0 - 0.5, x0 + 0.5
        if not (y1 > y0):
            y0, y1 = y0 - 0.5, y0 + 0.5
        if equal_aspect:
            upp = max((x1 - x0) / self.pw, (y1 - y0) / self.ph)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1 = cx - 0.5 * upp * self.pw, cx + 0.5 * upp * self.pw
            y0, y1 = cy - 0.5 * upp * self.ph, cy + 0.5 * upp * self.ph
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.sx = self.pw / (x1 - x0)
        self.sy = self.ph / (y1 - y0)
        self._data: list[str] = []
        self._screen: list[str] = []
        self._legend: list[tuple[str, str]] = []

    # -- coordinate helpers -------------------------------------------------
    def px(self, x: float) -> float:
        return self._ml + (x - self.x0) * self.sx

    def py(self, y: float) -> float:
        return self._mt + self.ph - (y - self.y0) * self.sy

    # -- data-space elements ------------------------------------------------
    def polyline(self, x, y, color: str, width: float = 1.5,
                 dash: str | None = None, opacity: float | None = None,
                 cls: str | None = None) -> None:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        finite = np.isfinite(x) & np.isfinite(y)
        for run in _runs(finite):
            if len(run) < 2:
                continue
            pts = " ".join(f"{fmt_sig(x[i])},{fmt_sig(y[i])}" for i in run)
            attrs = [f'points="{pts}"', 'fill="none"', f'stroke="{color}"',
                     f'stroke-width="{fmt_sig(width)}"',
                     'vector-effect="non-scaling-stroke"']
            if dash:
                attrs.append(f'stroke-dasharray="{dash}"')
            if opacity is not None:
                attrs.append(f'stroke-opacity="{fmt_sig(opacity)}"')
            if cls:
                attrs.append(f'class="{cls}"')
            self._data.append(f"<polyline {' '.join(attrs)}/>")

    def band(self, x, lo, hi, color: str, opacity: float = 0.18) -> None:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        finite = np.isfinite(x) & np.isfinite(lo) & np.isfinite(hi)
        for run in _runs(finite):
            if len(run) < 2:
                continue
            upper = [f"{fmt_sig(x[i])},{fmt_sig(hi[i])}" for i in run]
            lower = [f"{fmt_sig(x[i])},{fmt_sig(lo[i])}" for i in run[::-1]]
            self._data.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                f'fill-opacity="{fmt_sig(opacity)}" stroke="none" class="band"/>')

    def arrow(self, x: float, y: float, dx: float, dy: float, color: str,
              opacity: float = 1.0, width: float = 1.3) -> None:
        self._data.append(
            f'<path class="arrow" d="M {fmt_sig(x)} {fmt_sig(y)} '
            f'l {fmt_sig(dx)} {fmt_sig(dy)}" stroke="{color}" fill="none" '
            f'stroke-width="{fmt_sig(width)}" stroke-opacity="{fmt_sig(opacity)}" '
            f'vector-effect="non-scaling-stroke"/>')

    def data_circle(self, x: float, y: float, r: float, color: str,
                    cls: str = "ring") -> None:
        """Circle with a data-space radius (attractor disc)."""
        self._data.append(
            f'<circle class="{cls}" cx="{fmt_sig(x)}" cy="{fmt_sig(y)}" '
            f'r="{fmt_sig(r)}" fill="{color}" fill-opacity="0.10" '
            f'stroke="{color}" stroke-width="1.5" '
            f'vector-effect="non-scaling-stroke"/>')

    def diagonal(self) -> None:
        lo = max(self.x0, self.y0)
        hi = min(self.x1, self.y1)
        if hi > lo:
            self._data.append(
                f'<line x1="{fmt_sig(lo)}" y1="{fmt_sig(lo)}" x2="{fmt_sig(hi)}" '
                f'y2="{fmt_sig(hi)}" stroke="{GRAY}" stroke-width="1" '
                f'stroke-dasharray="4 3" vector-effect="non-scaling-stroke" '
                f'class="diagonal"/>')

    # -- pixel-space elements -----------------------------------------------
    def markers(self, x, y, colors, r: float = 2.5, cls: str = "pt",
                opacity: float = 0.85) -> None:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if isinstance(colors, str):
            colors = [colors] * len(x)
        for xi, yi, color in zip(x, y, colors):
            if not (np.isfinite(xi) and np.isfinite(yi)):
                continue
            self._screen.append(
                f'<circle class="{cls}" cx="{fmt_sig(self.px(xi))}" '
                f'cy="{fmt_sig(self.py(yi))}" r="{fmt_sig(r)}" fill="{color}" '
                f'fill-opacity="{fmt_sig(opacity)}"/>')

    def label(self, x: float, y: float, text: str, color: str = DARK,
              size: int = 11, anchor: str = "middle") -> None:
        self._screen.append(
            f'<text x="{fmt_sig(self.px(x))}" y="{fmt_sig(self.py(y))}" '
            f'font-size="{size}" fill="{color}" text-anchor="{anchor}" '
            f'font-family="sans-serif">{_escape(text)}</text>')

    def legend(self, label: str, color: str) -> None:
        self._legend.append((label, color))

    # -- assembly -----------------------------------------------------------
    def _axes(self) -> list[str]:
        out = []
        bx, by = self._ml, self._mt + self.ph
        out.append(f'<rect x="{self._ml}" y="{self._mt}" width="{self.pw}" '
                   f'height="{self.ph}" fill="none" stroke="{DARK}" stroke-width="1"/>')
        for t in nice_ticks(self.x0, self.x1):
            xp = self.px(t)
            out.append(f'<line x1="{fmt_sig(xp)}" y1="{by}" x2="{fmt_sig(xp)}" '
                       f'y2="{by + 5}" stroke="{DARK}" stroke-width="1"/>')
            out.append(f'<text x="{fmt_sig(xp)}" y="{by + 18}" font-size="11" '
                       f'fill="{DARK}" text-anchor="middle" '
                       f'font-family="sans-serif">{fmt_sig(t)}</text>')
        for t in nice_ticks(self.y0, self.y1):
            yp = self.py(t)
            out.append(f'<line x1="{bx - 5}" y1="{fmt_sig(yp)}" x2="{bx}" '
                       f'y2="{fmt_sig(yp)}" stroke="{DARK}" stroke-width="1"/>')
            out.append(f'<text x="{bx - 8}" y="{fmt_sig(yp + 4)}" font-size="11" '
                       f'fill="{DARK}" text-anchor="end" '
                       f'font-family="sans-serif">{fmt_sig(t)}</text>')
        if self.xlabel:
            out.append(f'<text x="{self._ml + self.pw / 2}" y="{self.height - 14}" '
                       f'font-size="12" fill="{DARK}" text-anchor="middle" '
                       f'font-family="sans-serif">{_escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = 16, self._mt + self.ph / 2
            out.append(f'<text x="{cx}" y="{fmt_sig(cy)}" font-size="12" fill="{DARK}" '
                       f'text-anchor="middle" font-family="sans-serif" '
                       f'transform="rotate(-90 {cx} {fmt_sig(cy)})">{_escape(self.ylabel)}</text>')
        if self.title:
            out.append(f'<text x="{self._ml + self.pw / 2}" y="24" font-size="14" '
                       f'fill="{DARK}" text-anchor="middle" font-weight="bold" '
                       f'font-family="sans-serif">{_escape(self.title)}</text>')
        for i, (label, color) in enumerate(self._legend):
            y = self._mt + 16 + 16 * i
            x = self._ml + 10
            out.append(f'<rect x="{x}" y="{y - 8}" width="14" height="8" '
                       f'fill="{color}"/>')
            out.append(f'<text x="{x + 19}" y="{y}" font-size="11" fill="{DARK}" '
                       f'text-anchor="start" font-family="sans-serif">{_escape(label)}</text>')
        return out

    def render(self) -> str:
        tx = self._ml - self.x0 * self.sx
        ty = self._mt + self.ph + self.y0 * self.sy
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
            f'<clipPath id="plot"><rect x="{self._ml}" y="{self._mt}" '
            f'width="{self.pw}" height="{self.ph}"/></clipPath>',
            f'<g clip-path="url(#plot)">',
            f'<g transform="translate({fmt_sig(tx)} {fmt_sig(ty)}) '
            f'scale({fmt_sig(self.sx)} {fmt_sig(-self.sy)})">',
            *self._data,
            "</g>",
            *self._screen,
            "</g>",
            *self._axes(),
            "</svg>",
        ]
        return "\n".join(parts) + "\n"

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def _escape(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def line_chart(path: str | Path, x, series, *, title: str = "",
               xlabel: str = "", ylabel: str = "", bands=None,
               width: int = 720, height: int = 420) -> None:
    """Line chart of one or more (label, values, color) series over x.

    `bands` is an optional list of (lo, hi, color) envelopes drawn under
    the lines.
    """
    x = np.asarray(x, dtype=float)
    stack = [np.asarray(v, dtype=float) for _, v, _ in series]
    for lo, hi, _ in bands or ():
        stack.extend([np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)])
    allv = np.concatenate([v[np.isfinite(v)] for v in stack]) if stack else np.array([0.0])
    vlo, vhi = (float(allv.min()), float(allv.max())) if len(allv) else (0.0, 1.0)
    pad = 0.05 * (vhi - vlo) if vhi > vlo else 0.5
    chart = SvgChart((float(x.min()), float(x.max())), (vlo - pad, vhi + pad),
                     width=width, height=height, title=title,
                     xlabel=xlabel, ylabel=ylabel)
    for lo, hi, color in bands or ():
        chart.band(x, lo, hi, color)
    for label, values, color in series:
        chart.polyline(x, values, color, width=1.8)
        chart.legend(label, color)
    chart.write(path)

"""Minimal SVG line plots with no plotting dependency.

Produces standalone, well-formed SVG files: one axes box, optional log
y-scale, a handful of line series with a legend.  Good enough for loss and
error curves; not a general plotting library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_WIDTH = 640
_HEIGHT = 420
_MARGIN_L = 64
_MARGIN_R = 18
_MARGIN_T = 34
_MARGIN_B = 46


@dataclass
class Series:
    x: list
    y: list
    label: str = ""
    kind: str = "line"  # "line" | "points" | "band"
    y2: list | None = None  # upper edge for kind="band"

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("series x and y lengths differ")
        if self.kind == "band" and (self.y2 is None or len(self.y2) != len(self.y)):
            raise ValueError("band series needs a matching upper edge")


@dataclass
class LinePlot:
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    log_y: bool = False
    series: list = field(default_factory=list)

    def add(self, x, y, label: str = "") -> None:
        self.series.append(Series([float(v) for v in x], [float(v) for v in y], label))

    def add_points(self, x, y, label: str = "") -> None:
        self.series.append(
            Series([float(v) for v in x], [float(v) for v in y], label, kind="points")
        )

    def add_band(self, x, y_lo, y_hi, label: str = "") -> None:
        self.series.append(
            Series(
                [float(v) for v in x],
                [float(v) for v in y_lo],
                label,
                kind="band",
                y2=[float(v) for v in y_hi],
            )
        )

    def _bounds(self):
        xs = [v for s in self.series for v in s.x]
        ys = [v for s in self.series for v in s.y]
        ys += [v for s in self.series if s.y2 is not None for v in s.y2]
        if self.log_y:
            ys = [v for v in ys if v > 0.0]
            if not ys:
                raise ValueError("log scale needs positive values")
        if not xs:
            raise ValueError("nothing to plot")
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if self.log_y:
            y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad = 0.04 * (y_hi - y_lo)
        return x_lo, x_hi, y_lo - pad, y_hi + pad

    def _to_px(self, x, y, bounds):
        x_lo, x_hi, y_lo, y_hi = bounds
        if self.log_y:
            y = math.log10(y)
        px = _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (_WIDTH - _MARGIN_L - _MARGIN_R)
        py = _HEIGHT - _MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (
            _HEIGHT - _MARGIN_T - _MARGIN_B
        )
        return px, py

    def _y_ticks(self, bounds):
        _, _, y_lo, y_hi = bounds
        if self.log_y:
            lo, hi = math.ceil(y_lo), math.floor(y_hi)
            if hi < lo:
                return [(y_lo + (y_hi - y_lo) / 2.0, "")]
            step = max(1, (hi - lo) // 5 or 1)
            return [(float(e), f"1e{e:d}") for e in range(lo, hi + 1, step)]
        span = y_hi - y_lo
        raw = span / 5.0
        mag = 10.0 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
        for mult in (1.0, 2.0, 5.0, 10.0):
            if raw <= mult * mag:
                step = mult * mag
                break
        first = math.ceil(y_lo / step) * step
        ticks = []
        v = first
        while v <= y_hi + 1e-12 * abs(step):
            ticks.append((v, f"{v:.3g}"))
            v += step
        return ticks

    def _x_ticks(self, bounds):
        x_lo, x_hi, _, _ = bounds
        ticks = []
        for i in range(6):
            v = x_lo + i * (x_hi - x_lo) / 5.0
            ticks.append((v, f"{v:.3g}"))
        return ticks

    def render(self) -> str:
        bounds = self._bounds()
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        ]
        ax_w = _WIDTH - _MARGIN_L - _MARGIN_R
        ax_h = _HEIGHT - _MARGIN_T - _MARGIN_B
        parts.append(
            f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{ax_w}" height="{ax_h}" '
            'fill="none" stroke="#444" stroke-width="1"/>'
        )
        for v, label in self._y_ticks(bounds):
            py = _HEIGHT - _MARGIN_B - (v - bounds[2]) / (bounds[3] - bounds[2]) * ax_h
            if py < _MARGIN_T - 1 or py > _HEIGHT - _MARGIN_B + 1:
                continue
            parts.append(
                f'<line x1="{_MARGIN_L}" y1="{py:.1f}" x2="{_WIDTH - _MARGIN_R}" '
                f'y2="{py:.1f}" stroke="#ddd" stroke-width="0.7"/>'
            )
            parts.append(
                f'<text x="{_MARGIN_L - 6}" y="{py + 4:.1f}" text-anchor="end" '
                f'font-size="11" font-family="sans-serif">{escape(label)}</text>'
            )
        for v, label in self._x_ticks(bounds):
            px, _ = self._to_px(v, bounds[2] if not self.log_y else 10.0 ** bounds[2], bounds)
            parts.append(
                f'<text x="{px:.1f}" y="{_HEIGHT - _MARGIN_B + 16}" text-anchor="middle" '
                f'font-size="11" font-family="sans-serif">{escape(label)}</text>'
            )
        for idx, s in enumerate(self.series):
            color = _PALETTE[idx % len(_PALETTE)]
            if s.kind == "band":
                lo, hi = [], []
                for x, y_lo, y_hi in zip(s.x, s.y, s.y2):
                    if self.log_y and (y_lo <= 0.0 or y_hi <= 0.0):
                        continue
                    p_lo = self._to_px(x, y_lo, bounds)
                    p_hi = self._to_px(x, y_hi, bounds)
                    lo.append(f"{p_lo[0]:.2f},{p_lo[1]:.2f}")
                    hi.append(f"{p_hi[0]:.2f},{p_hi[1]:.2f}")
                if lo:
                    ring = " ".join(lo + hi[::-1])
                    parts.append(
                        f'<polygon points="{ring}" fill="{color}" fill-opacity="0.18" '
                        'stroke="none"/>'
                    )
                continue
            pts = []
            for x, y in zip(s.x, s.y):
                if self.log_y and y <= 0.0:
                    continue
                px, py = self._to_px(x, y, bounds)
                pts.append((px, py))
            if not pts:
                continue
            if s.kind == "points":
                for px, py in pts:
                    parts.append(
                        f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.2" fill="{color}" '
                        'fill-opacity="0.65"/>'
                    )
            elif s.kind == "segments":
                for i in range(0, len(pts) - 1, 2):
                    (x1, y1), (x2, y2) = pts[i], pts[i + 1]
                    parts.append(
                        f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                        f'stroke="{color}" stroke-width="1.2"/>'
                    )
            else:
                joined = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
                parts.append(
                    f'<polyline points="{joined}" fill="none" '
                    f'stroke="{color}" stroke-width="1.6"/>'
                )
        if any(s.label for s in self.series):
            lx = _MARGIN_L + 10
            ly = _MARGIN_T + 14
            for idx, s in enumerate(self.series):
                if not s.label:
                    continue
                color = _PALETTE[idx % len(_PALETTE)]
                parts.append(
                    f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                    f'stroke="{color}" stroke-width="2"/>'
                )
                parts.append(
                    f'<text x="{lx + 28}" y="{ly}" font-size="11" '
                    f'font-family="sans-serif">{escape(s.label)}</text>'
                )
                ly += 16
        if self.title:
            parts.append(
                f'<text x="{_WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="13" '
                f'font-family="sans-serif" font-weight="bold">{escape(self.title)}</text>'
            )
        if self.x_label:
            parts.append(
                f'<text x="{_MARGIN_L + ax_w / 2:.0f}" y="{_HEIGHT - 10}" '
                f'text-anchor="middle" font-size="12" font-family="sans-serif">'
                f"{escape(self.x_label)}</text>"
            )
        if self.y_label:
            cy = _MARGIN_T + ax_h / 2
            parts.append(
                f'<text x="16" y="{cy:.0f}" text-anchor="middle" font-size="12" '
                f'font-family="sans-serif" transform="rotate(-90 16 {cy:.0f})">'
                f"{escape(self.y_label)}</text>"
            )
        parts.append("</svg>")
        return "\n".join(parts)

    def add_contour(self, xs, ys, z, level: float, label: str = "") -> None:
        """Marching-squares contour of a grid field z[i, j] = f(xs[i], ys[j])."""

        seg_x, seg_y = [], []
        for i in range(len(xs) - 1):
            for j in range(len(ys) - 1):
                corners = (
                    (xs[i], ys[j], z[i][j]),
                    (xs[i + 1], ys[j], z[i + 1][j]),
                    (xs[i + 1], ys[j + 1], z[i + 1][j + 1]),
                    (xs[i], ys[j + 1], z[i][j + 1]),
                )
                crossings = []
                for k in range(4):
                    xa, ya, va = corners[k]
                    xb, yb, vb = corners[(k + 1) % 4]
                    if (va - level) * (vb - level) < 0.0:
                        s = (level - va) / (vb - va)
                        crossings.append((xa + s * (xb - xa), ya + s * (yb - ya)))
                if len(crossings) >= 2:
                    seg_x.extend([crossings[0][0], crossings[1][0]])
                    seg_y.extend([crossings[0][1], crossings[1][1]])
                if len(crossings) == 4:
                    seg_x.extend([crossings[2][0], crossings[3][0]])
                    seg_y.extend([crossings[2][1], crossings[3][1]])
        self.series.append(
            Series(
                [float(v) for v in seg_x],
                [float(v) for v in seg_y],
                label,
                kind="segments",
            )
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())

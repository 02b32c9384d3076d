"""Minimal SVG line plots: polylines, filled percentile bands, 1-2-5 ticks.

Writing the XML directly keeps report generation free of plotting
dependencies; everything here is plain floats in, one SVG string out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PALETTE = ("#3465a4", "#cc0000", "#4e9a06", "#f57900", "#75507b",
           "#0c8691", "#8f5902", "#555753")


@dataclass
class Series:
    """One polyline."""

    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str = PALETTE[0]
    width: float = 1.6


@dataclass
class Band:
    """One filled lo..hi band over a common x grid."""

    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    color: str = PALETTE[0]
    opacity: float = 0.18


def percentile_bands(runs: list[tuple[np.ndarray, np.ndarray]],
                     ps: tuple[float, float, float] = (5.0, 50.0, 95.0),
                     n_grid: int = 96) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pool runs onto a common x grid and take percentiles across them.

    Each run is an (x, y) pair; runs may have different lengths and x
    spacing.  Returns (x_grid, lo, mid, hi) where the grid spans the
    union of run ranges and runs are linearly interpolated (edge-held
    outside their own range, so shorter runs still contribute).

    Raises:
        ValueError: no runs, or a run with fewer than 2 points.
    """
    if not runs:
        raise ValueError("need at least one run")
    cleaned = []
    for x, y in runs:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if keep.sum() < 2:
            raise ValueError("each run needs >= 2 finite points")
        cleaned.append((x[keep], y[keep]))
    x_min = min(r[0][0] for r in cleaned)
    x_max = max(r[0][-1] for r in cleaned)
    grid = np.linspace(x_min, x_max, n_grid)
    ys = np.stack([np.interp(grid, x, y) for x, y in cleaned])
    lo, mid, hi = np.percentile(ys, ps, axis=0)
    return grid, lo, mid, hi


def _nice_ticks(lo: float, hi: float, target: int = 5) -> np.ndarray:
    """Round tick positions covering [lo, hi]: 1-2-5 progression."""
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([0.0, 1.0])
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return ticks if len(ticks) >= 2 else np.array([lo, hi])


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.1e}"
    s = f"{v:.6g}"
    return s


@dataclass
class Figure:
    """Accumulates series/bands, renders one SVG."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 400
    series: list[Series] = field(default_factory=list)
    bands: list[Band] = field(default_factory=list)

    def add(self, x, y, label: str = "", color: str | None = None,
            width: float = 1.6) -> "Figure":
        c = color if color is not None else PALETTE[len(self.series) % len(PALETTE)]
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, c, width))
        return self

    def add_band(self, x, lo, hi, color: str, opacity: float = 0.18) -> "Figure":
        self.bands.append(Band(np.asarray(x, float), np.asarray(lo, float),
                               np.asarray(hi, float), color, opacity))
        return self

    def _bounds(self) -> tuple[float, float, float, float]:
        xs, ys = [], []
        for s in self.series:
            xs.append(s.x)
            ys.append(s.y)
        for b in self.bands:
            xs.append(b.x)
            ys.extend([b.lo, b.hi])
        x_all = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        y_all = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        x_all = x_all[np.isfinite(x_all)]
        y_all = y_all[np.isfinite(y_all)]
        if x_all.size == 0:
            x_all = np.array([0.0, 1.0])
        if y_all.size == 0:
            y_all = np.array([0.0, 1.0])
        x0, x1 = float(x_all.min()), float(x_all.max())
        y0, y1 = float(y_all.min()), float(y_all.max())
        if x1 <= x0:
            x1 = x0 + 1.0
        pad = 0.06 * (y1 - y0) or 0.5
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        ml, mr, mt, mb = 62, 16, 34 if self.title else 16, 46
        pw = self.width - ml - mr
        ph = self.height - mt - mb
        x0, x1, y0, y1 = self._bounds()

        def px(x):
            return ml + (np.asarray(x) - x0) / (x1 - x0) * pw

        def py(y):
            return mt + (y1 - np.asarray(y)) / (y1 - y0) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}" '
            f'font-family="Helvetica,Arial,sans-serif" font-size="11">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        # grid + ticks
        for tx in _nice_ticks(x0, x1):
            if tx < x0 - 1e-12 or tx > x1 + 1e-12:
                continue
            X = px(tx)
            out.append(f'<line x1="{X:.1f}" y1="{mt}" x2="{X:.1f}" y2="{mt + ph}" '
                       f'stroke="#dddddd" stroke-width="0.7"/>')
            out.append(f'<text x="{X:.1f}" y="{mt + ph + 15}" text-anchor="middle" '
                       f'fill="#333333">{_fmt(tx)}</text>')
        for ty in _nice_ticks(y0, y1):
            if ty < y0 - 1e-12 or ty > y1 + 1e-12:
                continue
            Y = py(ty)
            out.append(f'<line x1="{ml}" y1="{Y:.1f}" x2="{ml + pw}" y2="{Y:.1f}" '
                       f'stroke="#dddddd" stroke-width="0.7"/>')
            out.append(f'<text x="{ml - 6}" y="{Y + 3.5:.1f}" text-anchor="end" '
                       f'fill="#333333">{_fmt(ty)}</text>')
        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                   f'fill="none" stroke="#444444" stroke-width="1"/>')

        for b in self.bands:
            keep = np.isfinite(b.x) & np.isfinite(b.lo) & np.isfinite(b.hi)
            if keep.sum() < 2:
                continue
            xs, los, his = b.x[keep], b.lo[keep], b.hi[keep]
            fwd = [f"{px(x):.1f},{py(h):.1f}" for x, h in zip(xs, his)]
            back = [f"{px(x):.1f},{py(l):.1f}" for x, l in zip(xs[::-1], los[::-1])]
            out.append(f'<polygon points="{" ".join(fwd + back)}" fill="{b.color}" '
                       f'opacity="{b.opacity}" stroke="none"/>')
        for s in self.series:
            keep = np.isfinite(s.x) & np.isfinite(s.y)
            if keep.sum() < 2:
                continue
            pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.x[keep], s.y[keep]))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" '
                       f'stroke-width="{s.width}"/>')

        if self.title:
            out.append(f'<text x="{self.width / 2:.0f}" y="20" text-anchor="middle" '
                       f'font-size="14" fill="#111111">{self.title}</text>')
        if self.xlabel:
            out.append(f'<text x="{ml + pw / 2:.0f}" y="{self.height - 10}" '
                       f'text-anchor="middle" fill="#111111">{self.xlabel}</text>')
        if self.ylabel:
            ycen = mt + ph / 2
            out.append(f'<text x="14" y="{ycen:.0f}" text-anchor="middle" fill="#111111" '
                       f'transform="rotate(-90 14 {ycen:.0f})">{self.ylabel}</text>')
        labeled = [s for s in self.series if s.label]
        if labeled:
            lx, ly = ml + pw - 8, mt + 10
            for i, s in enumerate(labeled):
                Y = ly + 15 * i
                out.append(f'<line x1="{lx - 60}" y1="{Y - 3}" x2="{lx - 42}" y2="{Y - 3}" '
                           f'stroke="{s.color}" stroke-width="{s.width}"/>')
                out.append(f'<text x="{lx - 38}" y="{Y}" fill="#111111">{s.label}</text>')
        out.append("</svg>")
        return "\n".join(out)

    def save(self, path) -> str:
        svg = self.render()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        return str(path)

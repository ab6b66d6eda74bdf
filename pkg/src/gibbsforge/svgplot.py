"""A small dependency-free SVG line plotter: axes, ticks, polylines, markers, log scale."""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str | None = None
    dashed: bool = False
    markers: bool = False
    err: np.ndarray | None = None


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    logx: bool = False
    width: int = 640
    height: int = 420
    series: list[Series] = field(default_factory=list)
    vlines: list[tuple[float, str]] = field(default_factory=list)

    def line(self, x, y, label="", **kw) -> "Figure":
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, **kw))
        return self

    def vline(self, x: float, label: str = "") -> "Figure":
        self.vlines.append((float(x), label))
        return self

    def render(self) -> str:
        return render(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([0.0])
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = mag * min((1, 2, 2.5, 5, 10), key=lambda m: abs(m * mag - raw))
    start = np.ceil(lo / step - 1e-9) * step
    return np.arange(start, hi + step * 1e-9, step)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def _transform(v, log):
    v = np.asarray(v, float)
    if not log:
        return v
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)


def render(fig: Figure) -> str:
    W, H = fig.width, fig.height
    left, right, top, bottom = 70, 150, 36, 50
    pw, ph = W - left - right, H - top - bottom
    xs = [_transform(s.x, fig.logx) for s in fig.series]
    ys = [_transform(s.y, fig.logy) for s in fig.series]
    ylo_hi = []
    for s, y in zip(fig.series, ys):
        if s.err is not None and not fig.logy:
            ylo_hi += [y - s.err, y + s.err]
        ylo_hi.append(y)
    allx = np.concatenate([x[np.isfinite(x)] for x in xs]) if xs else np.array([0.0, 1.0])
    ally = np.concatenate([y[np.isfinite(y)] for y in ylo_hi]) if ylo_hi else np.array([0.0, 1.0])
    if allx.size == 0:
        allx = np.array([0.0, 1.0])
    if ally.size == 0:
        ally = np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in nice_ticks(x0, x1):
        X = px(t)
        lab = _fmt(10**t) if fig.logx else _fmt(t)
        out.append(f'<line x1="{X:.1f}" y1="{top + ph}" x2="{X:.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{top + ph + 16}" text-anchor="middle">{lab}</text>')
    yt = np.arange(np.ceil(y0), np.floor(y1) + 1) if fig.logy and y1 - y0 >= 1 else nice_ticks(y0, y1)
    for t in yt:
        Y = py(t)
        lab = _fmt(10**t) if fig.logy else _fmt(t)
        out.append(f'<line x1="{left - 4}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{Y + 4:.1f}" text-anchor="end">{lab}</text>')
    for xv, lab in fig.vlines:
        X = px(_transform([xv], fig.logx)[0])
        out.append(f'<line x1="{X:.1f}" y1="{top}" x2="{X:.1f}" y2="{top + ph}" stroke="red" stroke-dasharray="2,3"/>')
        if lab:
            out.append(f'<text x="{X + 3:.1f}" y="{top + 12}" fill="red">{escape(lab)}</text>')
    for k, (s, x, y) in enumerate(zip(fig.series, xs, ys)):
        color = s.color or PALETTE[k % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[ok], y[ok]))
        dash = ' stroke-dasharray="5,4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>')
        if s.markers:
            for a, b in zip(x[ok], y[ok]):
                out.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="3" fill="{color}"/>')
        if s.err is not None and not fig.logy:
            for a, b, e in zip(x[ok], y[ok], np.asarray(s.err)[ok]):
                out.append(
                    f'<line x1="{px(a):.1f}" y1="{py(b - e):.1f}" x2="{px(a):.1f}" y2="{py(b + e):.1f}" stroke="{color}"/>'
                )
        if s.label:
            ly = top + 14 + 16 * k
            out.append(
                f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}"'
                f' stroke-width="2"{dash}/>'
            )
            out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(s.label)}</text>')
    if fig.title:
        out.append(f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(fig.title)}</text>')
    if fig.xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{H - 10}" text-anchor="middle">{escape(fig.xlabel)}</text>')
    if fig.ylabel:
        out.append(
            f'<text x="16" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2})">'
            f"{escape(fig.ylabel)}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"

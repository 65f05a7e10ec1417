"""Aggregation and rendering of run artifacts.

Scores are reported as the mean over per-seed episode means with a
normal-approximation 95% confidence half-width across seeds. Charts are
dependency-free hand-emitted SVG line plots; the twin-axis variant puts
ensemble disagreement on the left axis and BC usage on the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError
from .switching import ci95

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class SeedAggregate:
    mean: float
    ci95: float
    per_seed: list[float]


def aggregate_over_seeds(per_seed_means) -> SeedAggregate:
    values = [float(v) for v in per_seed_means]
    return SeedAggregate(
        mean=float(np.mean(values)),
        ci95=ci95(values),
        per_seed=values,
    )


def markdown_table(headers, rows) -> str:
    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines) + "\n"


def format_score(agg: SeedAggregate) -> str:
    return f"{agg.mean:.1f} ± {agg.ci95:.1f}"


# --- SVG emission -------------------------------------------------------------

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 64, 64, 40, 48


def _ticks(lo: float, hi: float, n: int = 5):
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _scale(v, lo, hi, out_lo, out_hi):
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (v - lo) * (out_hi - out_lo) / (hi - lo)


class _SvgDoc:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_esc(title)}</text>',
        ]

    def add(self, fragment: str) -> None:
        self.parts.append(fragment)

    def text(self, x, y, s, size=11, anchor="middle", color="#333", rotate=None):
        transform = f' transform="rotate(-90 {x:.1f} {y:.1f})"' if rotate else ""
        self.add(
            f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" '
            f'font-family="sans-serif" font-size="{size}" fill="{color}"{transform}>'
            f"{_esc(s)}</text>"
        )

    def line(self, x1, y1, x2, y2, color="#999", width=1.0):
        self.add(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                 f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, points, color, width=1.8, dash=None):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                 f'stroke-width="{width}"{dash_attr}/>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _esc(s: str) -> str:
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _axis_bounds(series):
    ys = np.concatenate([np.asarray(ys, dtype=np.float64) for _, _, ys in series])
    ys = ys[np.isfinite(ys)]
    if ys.size == 0:
        return 0.0, 1.0
    lo, hi = float(ys.min()), float(ys.max())
    pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.1
    return lo - pad, hi + pad


def svg_line_chart(series, title: str, x_label: str, y_label: str) -> str:
    """Line chart over shared x values. series: [(name, xs, ys), ...]."""
    if not series:
        raise ConfigurationError("chart needs at least one series")
    xs_all = np.concatenate([np.asarray(xs, dtype=np.float64) for _, xs, _ in series])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = _axis_bounds(series)
    doc = _SvgDoc(title)
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    doc.line(x0, y0, x1, y0)
    doc.line(x0, y0, x0, y1)
    for tv in _ticks(x_lo, x_hi):
        px = _scale(tv, x_lo, x_hi, x0, x1)
        doc.line(px, y0, px, y0 + 4)
        doc.text(px, y0 + 18, f"{tv:g}")
    for tv in _ticks(y_lo, y_hi):
        py = _scale(tv, y_lo, y_hi, y0, y1)
        doc.line(x0 - 4, py, x0, py)
        doc.text(x0 - 8, py + 4, f"{tv:.3g}", anchor="end")
    doc.text((x0 + x1) / 2, _H - 12, x_label, size=12)
    doc.text(16, (y0 + y1) / 2, y_label, size=12, rotate=True)
    for k, (name, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = [
            (_scale(x, x_lo, x_hi, x0, x1), _scale(y, y_lo, y_hi, y0, y1))
            for x, y in zip(xs, ys) if np.isfinite(y)
        ]
        doc.polyline(pts, color)
        doc.text(x1 - 6, _MT + 16 + 16 * k, name, anchor="end", color=color)
    return doc.render()


def svg_twin_chart(left_series, right_series, title: str, x_label: str,
                   left_label: str, right_label: str) -> str:
    """Two y axes over a shared x axis (diagnostic traces)."""
    if not left_series or not right_series:
        raise ConfigurationError("twin chart needs series on both axes")
    xs_all = np.concatenate([
        np.asarray(xs, dtype=np.float64) for _, xs, _ in list(left_series) + list(right_series)
    ])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    l_lo, l_hi = _axis_bounds(left_series)
    r_lo, r_hi = _axis_bounds(right_series)
    doc = _SvgDoc(title)
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    doc.line(x0, y0, x1, y0)
    doc.line(x0, y0, x0, y1)
    doc.line(x1, y0, x1, y1)
    for tv in _ticks(x_lo, x_hi):
        px = _scale(tv, x_lo, x_hi, x0, x1)
        doc.line(px, y0, px, y0 + 4)
        doc.text(px, y0 + 18, f"{tv:g}")
    for tv in _ticks(l_lo, l_hi):
        py = _scale(tv, l_lo, l_hi, y0, y1)
        doc.line(x0 - 4, py, x0, py)
        doc.text(x0 - 8, py + 4, f"{tv:.3g}", anchor="end")
    for tv in _ticks(r_lo, r_hi):
        py = _scale(tv, r_lo, r_hi, y0, y1)
        doc.line(x1, py, x1 + 4, py)
        doc.text(x1 + 8, py + 4, f"{tv:.3g}", anchor="start")
    doc.text((x0 + x1) / 2, _H - 12, x_label, size=12)
    doc.text(16, (y0 + y1) / 2, left_label, size=12, rotate=True)
    doc.text(_W - 12, (y0 + y1) / 2, right_label, size=12, rotate=True)
    k = 0
    for name, xs, ys in left_series:
        color = _COLORS[k % len(_COLORS)]
        pts = [(_scale(x, x_lo, x_hi, x0, x1), _scale(y, l_lo, l_hi, y0, y1))
               for x, y in zip(xs, ys) if np.isfinite(y)]
        doc.polyline(pts, color)
        doc.text(x1 - 6, _MT + 16 + 16 * k, name, anchor="end", color=color)
        k += 1
    for name, xs, ys in right_series:
        color = _COLORS[k % len(_COLORS)]
        pts = [(_scale(x, x_lo, x_hi, x0, x1), _scale(y, r_lo, r_hi, y0, y1))
               for x, y in zip(xs, ys) if np.isfinite(y)]
        doc.polyline(pts, color, dash="6 3")
        doc.text(x1 - 6, _MT + 16 + 16 * k, name, anchor="end", color=color)
        k += 1
    return doc.render()

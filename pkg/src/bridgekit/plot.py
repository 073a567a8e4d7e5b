"""Minimal standalone SVG line plots."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .errors import BridgeKitError

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 150, 20, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


class PlotError(BridgeKitError, ValueError):
    pass


Series = Mapping[str, Sequence[tuple[float, float]]]


def _transform(values: list[float], log: bool, axis: str) -> list[float]:
    if log:
        if any(v <= 0 for v in values):
            raise PlotError(f"log {axis}-axis needs positive values")
        return [math.log10(v) for v in values]
    return values


def _span(vals: list[float]) -> tuple[float, float]:
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _fmt(v: float, log: bool) -> str:
    return f"{10**v:.3g}" if log else f"{v:.3g}"


def emit_svg_lineplot(
    series: Series,
    xlabel: str,
    ylabel: str,
    path: str | Path,
    log_x: bool = False,
    log_y: bool = False,
) -> Path:
    """Write one polyline per named series with labelled axes and a legend."""
    if not series or any(len(pts) == 0 for pts in series.values()):
        raise PlotError("every series needs at least one point")
    for name, pts in series.items():
        if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in pts):
            raise PlotError(f"series {name!r} has non-finite values")
    tx = {k: _transform([float(x) for x, _ in v], log_x, "x") for k, v in series.items()}
    ty = {k: _transform([float(y) for _, y in v], log_y, "y") for k, v in series.items()}
    x0, x1 = _span([v for vs in tx.values() for v in vs])
    y0, y1 = _span([v for vs in ty.values() for v in vs])
    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(v: float) -> float:
        return MARGIN_LEFT + (v - x0) / (x1 - x0) * pw

    def py(v: float) -> float:
        return MARGIN_TOP + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP + ph}" x2="{MARGIN_LEFT + pw}" y2="{MARGIN_TOP + ph}" stroke="black"/>',
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{MARGIN_TOP + ph}" stroke="black"/>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(
            f'<text x="{px(fx):.2f}" y="{MARGIN_TOP + ph + 15}" text-anchor="middle">{_fmt(fx, log_x)}</text>'
        )
        out.append(f'<text x="{MARGIN_LEFT - 5}" y="{py(fy) + 4:.2f}" text-anchor="end">{_fmt(fy, log_y)}</text>')
    out.append(
        f'<text x="{MARGIN_LEFT + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="15" y="{MARGIN_TOP + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {MARGIN_TOP + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, name in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(tx[name], ty[name]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN_TOP + 15 + 16 * i
        out.append(
            f'<text x="{MARGIN_LEFT + pw + 10}" y="{ly}" fill="{color}">{escape(str(name))}</text>'
        )
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")
    return path

"""Minimal standalone SVG line plots (no plotting library)."""
from __future__ import annotations

import logging
import math
import re
from xml.sax.saxutils import escape as _xml_escape

log = logging.getLogger(__name__)

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#ad494a"]

WIDTH, HEIGHT = 720, 440
MARGIN = dict(left=70, right=170, top=40, bottom=55)


_XML_INVALID = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ufffe\uffff]")


def escape(text: str) -> str:
    # characters XML 1.0 cannot carry at all become U+FFFD
    return _xml_escape(_XML_INVALID.sub("\ufffd", str(text)))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3g}"


def _linear_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    raw = (hi * 0.5 - lo * 0.5) / n * 2.0
    if not hi > lo or not math.isfinite(raw) or raw < 1e-300:
        return [lo, hi] if hi > lo else [lo]
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    ticks = []
    # indexed rather than accumulated so a step below the float resolution of lo cannot stall
    for i in range(2 * n + 2):
        t = first + i * step
        if not (math.isfinite(t) and t <= hi + 1e-9 * step):
            break
        t = 0.0 if abs(t) < 1e-12 * step else t
        if not ticks or t != ticks[-1]:
            ticks.append(t)
    return ticks or [lo, hi]


def decade_ticks(lo: float, hi: float) -> list[float]:
    """Powers of ten covering [lo, hi] (lo, hi > 0)."""
    return [10.0 ** k for k in range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)]


def _decades_within(e0: float, e1: float) -> list[float]:
    """Powers of ten whose exponent lies in [e0, e1], restricted to normal doubles."""
    lo, hi = max(math.ceil(e0 - 1e-9), -307), min(math.floor(e1 + 1e-9), 308)
    return [10.0 ** k for k in range(lo, hi + 1)]


def _decade_label(v: float) -> str:
    k = round(math.log10(v))
    return f"1e{k}"


def _widen(lo: float, hi: float) -> tuple[float, float]:
    """Pad a degenerate axis range so it has a representable, nonzero span."""
    if hi * 0.5 - lo * 0.5 > abs(lo) * 1e-12 + 1e-300:
        return lo, hi
    pad = max(0.5, abs(lo) * 1e-6)
    if not math.isfinite(hi + pad):
        return lo - 2 * pad, hi
    if not math.isfinite(lo - pad):
        return lo, hi + 2 * pad
    return lo - pad, hi + pad


def emit_svg_lineplot(series, title: str = "", xlabel: str = "", ylabel: str = "",
                      log_x: bool = False, log_y: bool = False, markers: bool | None = None) -> str:
    """Render named ``(x, y)`` series as an SVG 1.1 document.

    ``series`` is a sequence of ``(name, xs, ys)`` tuples (or a dict name ->
    (xs, ys)); legend entries follow input order.  Non-finite points, and
    non-positive points on a log axis, are dropped and counted.
    """
    if isinstance(series, dict):
        series = [(k, v[0], v[1]) for k, v in series.items()]
    if not series:
        raise ValueError("at least one series is required")
    cleaned, dropped = [], 0
    for name, xs, ys in series:
        pts = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            ok = math.isfinite(x) and math.isfinite(y) and (not log_x or x > 0) and (not log_y or y > 0)
            if ok:
                pts.append((x, y))
            else:
                dropped += 1
        cleaned.append((str(name), pts))
    if dropped:
        log.warning("dropped %d non-finite or non-plottable points", dropped)

    all_pts = [p for _, pts in cleaned for p in pts]
    tx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    ty = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    if all_pts:
        xs = [tx(p[0]) for p in all_pts]
        ys = [ty(p[1]) for p in all_pts]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    x0, x1 = _widen(x0, x1)
    y0, y1 = _widen(y0, y1)

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    # halved operands keep spans near the double limit finite
    def px(v):
        return left + (tx(v) * 0.5 - x0 * 0.5) / (x1 * 0.5 - x0 * 0.5) * pw

    def py(v):
        return top + ph - (ty(v) * 0.5 - y0 * 0.5) / (y1 * 0.5 - y0 * 0.5) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
    ]
    if dropped:
        out.append(f"<!-- dropped {dropped} non-plottable points -->")
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')

    if log_x:
        xticks = _decades_within(x0, x1)
        xlab = _decade_label
    else:
        xticks, xlab = _linear_ticks(x0, x1), _tick_label
    if log_y:
        yticks = _decades_within(y0, y1)
        ylab = _decade_label
    else:
        yticks, ylab = _linear_ticks(y0, y1), _tick_label
    for t in xticks:
        x = px(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text class="xtick" x="{_fmt(x)}" y="{top + ph + 18}" text-anchor="middle">{xlab(t)}</text>')
    for t in yticks:
        y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text class="ytick" x="{left - 8}" y="{_fmt(y + 4)}" text-anchor="end">{ylab(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')

    for i, (name, pts) in enumerate(cleaned):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
        if len(pts) > 1:
            out.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        show_markers = markers if markers is not None else len(pts) <= 30
        if show_markers:
            for x, y in pts:
                out.append(f'<circle class="marker" cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.5" fill="{color}"/>')
        ly = top + 12 + 18 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{lx + 26}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

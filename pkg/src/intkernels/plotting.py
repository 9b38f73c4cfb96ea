"""Standalone SVG kernel profiles: coordinate on the vertical axis, weight on the horizontal."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


class PlotError(ValueError):
    pass


WIDTH, HEIGHT = 360, 420
MARGIN = {"left": 62, "right": 16, "top": 34, "bottom": 46}


def _profile_axis(export: dict, entry: dict) -> tuple[str, np.ndarray]:
    axes = export["axes"]
    if len(entry["dims"]) != 1:
        raise PlotError(f"only 1-D kernels can be drawn as profiles, got dims {entry['dims']}")
    dim = entry["dims"][0]
    name = {"horizontal": "horizontal-x"}.get(dim, dim)
    if name not in axes:
        raise PlotError(f"export has no coordinates for axis {name!r}")
    return name, np.asarray(axes[name], dtype=np.float64)


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    step = 10 ** np.floor(np.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    ticks = np.arange(np.ceil(lo / step), np.floor(hi / step) + 1) * step
    return ticks + 0.0  # no "-0" labels


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def profile_svg(exports: list[dict], predictor_id: int = 0, feature_id: int = 0, title: str | None = None) -> str:
    """One kernel profile across seeds: mean line with a shaded +-1 std band.

    Mixture kernels also get their mean components as dashed blue lines with
    the sum in solid red. Weights keep their sign.
    """
    if not exports:
        raise PlotError("nothing to plot")
    entries = []
    for ex in exports:
        match = [k for k in ex["kernels"] if k["predictor_id"] == predictor_id and k["feature_id"] == feature_id]
        if not match:
            raise PlotError(f"no kernel ({predictor_id}, {feature_id}) in export of {ex.get('model')}")
        entries.append(match[0])
    axis_name, coord = _profile_axis(exports[0], entries[0])
    w = np.array([np.ravel(e["weights"]) for e in entries], dtype=np.float64)
    if w.shape[1] != coord.size:
        raise PlotError(f"{w.shape[1]} weights for {coord.size} coordinates")
    mean = w.mean(axis=0)
    std = w.std(axis=0, ddof=1) if len(w) > 1 else np.zeros_like(mean)
    is_mix = entries[0]["family"] == "mixture" and all("components" in e for e in entries)
    comps = (np.array([[np.ravel(c) for c in e["components"]] for e in entries]).mean(axis=0)
             if is_mix else np.zeros((0, coord.size)))

    lo = min(float((mean - std).min()), float(comps.min()) if comps.size else 0.0, 0.0)
    hi = max(float((mean + std).max()), float(comps.max()) if comps.size else 0.0)
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    c_lo, c_hi = float(coord.min()), float(coord.max())
    if c_hi == c_lo:
        c_lo, c_hi = c_lo - 0.5, c_hi + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (np.asarray(v) - lo) / (hi - lo) * pw

    def sy(c):
        # smallest coordinate (e.g. 500 hPa, the upper atmosphere) at the top
        return MARGIN["top"] + (np.asarray(c) - c_lo) / (c_hi - c_lo) * ph

    def path(xs, ys):
        return "M" + " L".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    label = title or f"{entries[0]['predictor']} ({entries[0]['family']}, {exports[0].get('model', '')})"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(label)}</text>']
    x0, y0, y1 = MARGIN["left"], MARGIN["top"], MARGIN["top"] + ph
    out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(lo, hi):
        x = float(sx(t))
        out.append(f'<line x1="{x:.2f}" y1="{y1}" x2="{x:.2f}" y2="{y1 + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y1 + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(c_lo, c_hi):
        y = float(sy(t))
        out.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    if lo < 0 < hi:
        xz = float(sx(0.0))
        out.append(f'<line x1="{xz:.2f}" y1="{y0}" x2="{xz:.2f}" y2="{y1}" stroke="#999" stroke-dasharray="2,2"/>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">kernel weight</text>')
    out.append(f'<text transform="translate(14,{y0 + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
               f'{escape(axis_name)}</text>')

    ys = sy(coord)
    color = "#d62728" if is_mix else "black"
    if len(w) > 1:
        band = path(sx(mean - std), ys) + " L" + " L".join(
            f"{x:.2f},{y:.2f}" for x, y in zip(sx(mean + std)[::-1], ys[::-1])) + " Z"
        out.append(f'<path class="std-band" d="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
    for c in comps:
        out.append(f'<path class="component" d="{path(sx(c), ys)}" fill="none" stroke="#1f77b4" '
                   f'stroke-width="1.5" stroke-dasharray="5,3"/>')
    out.append(f'<path class="mean" d="{path(sx(mean), ys)}" fill="none" stroke="{color}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

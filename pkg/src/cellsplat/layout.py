"""SVG diagrams of a partition: original cells, expanded cells and cameras."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .partition import CellSpec

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def layout_svg(
    specs: Sequence[CellSpec],
    cameras_xz: Optional[np.ndarray] = None,
    size: int = 800,
    margin: int = 40,
    title: str = "",
) -> str:
    """Top-down view: x to the right, z downwards, one colour per cell."""
    rects = [s.expanded for s in specs] + [s.original for s in specs]
    xs = [r.min_x for r in rects] + [r.max_x for r in rects]
    zs = [r.min_z for r in rects] + [r.max_z for r in rects]
    if cameras_xz is not None and len(cameras_xz):
        xs += [float(cameras_xz[:, 0].min()), float(cameras_xz[:, 0].max())]
        zs += [float(cameras_xz[:, 1].min()), float(cameras_xz[:, 1].max())]
    x0, x1, z0, z1 = min(xs), max(xs), min(zs), max(zs)
    span = max(x1 - x0, z1 - z0, 1e-9)
    s = (size - 2 * margin) / span

    def tx(x):
        return margin + (x - x0) * s

    def tz(z):
        return margin + (z - z0) * s

    w = int(np.ceil(2 * margin + (x1 - x0) * s))
    h = int(np.ceil(2 * margin + (z1 - z0) * s))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin / 2:.1f}" font-family="sans-serif" font-size="14">{escape(title)}</text>')
    for k, spec in enumerate(specs):
        c = PALETTE[k % len(PALETTE)]
        e, o = spec.expanded, spec.original
        out.append(
            f'<rect class="expanded" x="{tx(e.min_x):.2f}" y="{tz(e.min_z):.2f}" width="{e.width * s:.2f}" '
            f'height="{e.depth * s:.2f}" fill="none" stroke="{c}" stroke-dasharray="6 4" stroke-width="1"/>'
        )
        out.append(
            f'<rect class="original" x="{tx(o.min_x):.2f}" y="{tz(o.min_z):.2f}" width="{o.width * s:.2f}" '
            f'height="{o.depth * s:.2f}" fill="{c}" fill-opacity="0.12" stroke="{c}" stroke-width="2"/>'
        )
        cx, cz = o.center
        out.append(
            f'<text x="{tx(cx):.2f}" y="{tz(cz):.2f}" font-family="sans-serif" font-size="12" '
            f'text-anchor="middle">{escape(spec.name)}</text>'
        )
    if cameras_xz is not None:
        for x, z in np.asarray(cameras_xz, float):
            out.append(f'<circle class="camera" cx="{tx(x):.2f}" cy="{tz(z):.2f}" r="2" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_layout_svg(path, specs, cameras_xz=None, **kw) -> Path:
    path = Path(path)
    path.write_text(layout_svg(specs, cameras_xz, **kw), encoding="utf-8")
    return path

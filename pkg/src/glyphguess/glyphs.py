"""Deterministic SVG rendering of attribute bundles.

The glyph is the only thing a human answerer sees, so every attribute has
to be readable at a glance: count-many shapes of the right color/size/fill
on the right background.
"""

from __future__ import annotations

import math

from .world import SynthImage

_CANVAS = 120.0
_SIZE_RADIUS = {"small": 10.0, "medium": 16.0, "large": 22.0}
_BACKGROUND = {"white": "#ffffff", "gray": "#9e9e9e", "black": "#1a1a1a"}
_COLOR = {
    "red": "#d8343b",
    "green": "#2f9e44",
    "blue": "#2c6fd6",
    "yellow": "#e3b505",
    "purple": "#8648bd",
    "orange": "#e8702a",
}

# Fixed slots so layouts never depend on randomness.
_SLOTS = {
    1: [(60.0, 60.0)],
    2: [(38.0, 60.0), (82.0, 60.0)],
    3: [(34.0, 60.0), (60.0, 60.0), (86.0, 60.0)],
    4: [(38.0, 38.0), (82.0, 38.0), (38.0, 82.0), (82.0, 82.0)],
}


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _polygon_points(cx: float, cy: float, r: float, n: int, phase: float) -> str:
    pts = []
    for k in range(n):
        ang = phase + 2.0 * math.pi * k / n
        pts.append(f"{_fmt(cx + r * math.sin(ang))},{_fmt(cy - r * math.cos(ang))}")
    return " ".join(pts)


def _star_points(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        ang = math.pi * k / 5.0
        rr = r if k % 2 == 0 else 0.45 * r
        pts.append(f"{_fmt(cx + rr * math.sin(ang))},{_fmt(cy - rr * math.cos(ang))}")
    return " ".join(pts)


def _shape_element(shape: str, cx: float, cy: float, r: float, paint: str) -> str:
    if shape == "circle":
        return f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" {paint}/>'
    if shape == "square":
        s = r * 1.6
        return (
            f'<rect x="{_fmt(cx - s / 2)}" y="{_fmt(cy - s / 2)}" '
            f'width="{_fmt(s)}" height="{_fmt(s)}" {paint}/>'
        )
    if shape == "triangle":
        return f'<polygon points="{_polygon_points(cx, cy, r * 1.15, 3, 0.0)}" {paint}/>'
    if shape == "hexagon":
        return f'<polygon points="{_polygon_points(cx, cy, r * 1.1, 6, 0.0)}" {paint}/>'
    if shape == "diamond":
        return f'<polygon points="{_polygon_points(cx, cy, r * 1.2, 4, 0.0)}" {paint}/>'
    if shape == "star":
        return f'<polygon points="{_star_points(cx, cy, r * 1.25)}" {paint}/>'
    raise ValueError(f"unknown shape {shape!r}")


def render_glyph(image: SynthImage) -> str:
    """SVG for one image; byte-identical for identical attribute bundles."""
    attrs = image.attributes
    color = _COLOR[attrs["color"]]
    bg = _BACKGROUND[attrs["background"]]
    r = _SIZE_RADIUS[attrs["size"]]
    count = int(attrs["count"])
    fill = attrs["fill"]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(_CANVAS)} {_fmt(_CANVAS)}">'
    ]
    if fill == "striped":
        parts.append(
            '<defs><pattern id="stripes" width="6" height="6" patternUnits="userSpaceOnUse" '
            'patternTransform="rotate(45)">'
            f'<rect width="6" height="6" fill="{bg}"/>'
            f'<rect width="3" height="6" fill="{color}"/>'
            "</pattern></defs>"
        )
    parts.append(f'<rect width="{_fmt(_CANVAS)}" height="{_fmt(_CANVAS)}" fill="{bg}"/>')
    if fill == "solid":
        paint = f'fill="{color}"'
    elif fill == "hollow":
        paint = f'fill="none" stroke="{color}" stroke-width="3"'
    else:
        paint = f'fill="url(#stripes)" stroke="{color}" stroke-width="1.5"'
    for cx, cy in _SLOTS[count]:
        parts.append(_shape_element(attrs["shape"], cx, cy, r, paint))
    parts.append("</svg>")
    return "".join(parts)

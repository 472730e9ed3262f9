"""Hand-rolled SVG rendering of forecasts and error curves.

Tracks are drawn in a local equirectangular projection (longitude scaled
by cos of the mid-latitude); error curves come from report CSVs.  Output
is plain SVG text with no plotting dependencies, deterministic per input.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict

from .errors import ParseError

WIDTH = 800
HEIGHT = 600
MARGIN = 50

_KIND_STYLE = {
    "sample": 'stroke="#9ecae1" stroke-width="1" fill="none"',
    "mean_route": 'stroke="#08519c" stroke-width="2.5" fill="none"',
    "track": 'stroke="#444444" stroke-width="1.5" fill="none"',
}


def _svg(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>'] + body + ["</svg>"]) + "\n"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Projector:
    def __init__(self, lons, lats):
        lat_mid = (min(lats) + max(lats)) / 2 if lats else 0.0
        self.kx = math.cos(math.radians(lat_mid))
        xs = [lon * self.kx for lon in lons] or [0.0]
        ys = list(lats) or [0.0]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        pad_x = (x1 - x0) * 0.05 or 0.5
        pad_y = (y1 - y0) * 0.05 or 0.5
        x0, x1 = x0 - pad_x, x1 + pad_x
        y0, y1 = y0 - pad_y, y1 + pad_y
        scale = min((WIDTH - 2 * MARGIN) / (x1 - x0), (HEIGHT - 2 * MARGIN) / (y1 - y0))
        self.x0, self.y1, self.scale = x0, y1, scale

    def xy(self, lon: float, lat: float) -> tuple[float, float]:
        return (
            MARGIN + (lon * self.kx - self.x0) * self.scale,
            MARGIN + (self.y1 - lat) * self.scale,
        )


def geojson_svg(doc: dict) -> str:
    """One polyline per LineString feature, dots for Points; empty input, empty canvas."""
    if doc.get("type") != "FeatureCollection" or "features" not in doc:
        raise ParseError("expected a GeoJSON FeatureCollection")
    lons, lats = [], []
    for feat in doc["features"]:
        geom = feat.get("geometry")
        if not geom:
            continue
        coords = geom["coordinates"]
        pts = coords if geom["type"] == "LineString" else [coords]
        for lon, lat in pts:
            lons.append(lon)
            lats.append(lat)
    if not lons:
        return _svg(['<text x="20" y="30" font-size="14">no features</text>'])
    proj = _Projector(lons, lats)
    body = []
    for feat in doc["features"]:
        geom = feat.get("geometry")
        if not geom:
            continue
        kind = feat.get("properties", {}).get("kind", "track")
        if geom["type"] == "LineString":
            style = _KIND_STYLE.get(kind, _KIND_STYLE["track"])
            pts = " ".join(
                f"{_fmt(x)},{_fmt(y)}" for x, y in (proj.xy(*c) for c in geom["coordinates"])
            )
            body.append(f'<polyline points="{pts}" {style}/>')
        elif geom["type"] == "Point":
            x, y = proj.xy(*geom["coordinates"])
            color = "#d62728" if kind == "consensus_destination" else "#08519c"
            r = 5 if kind == "consensus_destination" else 2.5
            body.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}"/>')
    return _svg(body)


def error_curve_svg(rows: list[tuple[float, float]], units: str) -> str:
    """Mean error vs horizon offset; one axis mark per interval offset."""
    if not rows:
        return _svg(['<text x="20" y="30" font-size="14">no data</text>'])
    rows = sorted(rows)
    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    x1 = max(xs)
    y1 = max(ys) or 1.0
    hourly = all(x >= 3600 for x in xs)

    def sx(x):
        return MARGIN + x / x1 * (WIDTH - 2 * MARGIN)

    def sy(y):
        return HEIGHT - MARGIN - y / (y1 * 1.05) * (HEIGHT - 2 * MARGIN)

    body = [
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" font-size="13" text-anchor="middle">'
        f"forecast time ({'h' if hourly else 's'})</text>",
        f'<text x="15" y="{HEIGHT // 2}" font-size="13" transform="rotate(-90 15 {HEIGHT // 2})" '
        f'text-anchor="middle">error ({units})</text>',
    ]
    for x in xs:
        px = sx(x)
        label = f"{x / 3600:g}" if hourly else f"{x:g}"
        body.append(
            f'<line x1="{_fmt(px)}" y1="{HEIGHT - MARGIN}" x2="{_fmt(px)}" y2="{HEIGHT - MARGIN + 5}" stroke="black"/>'
        )
        body.append(
            f'<text x="{_fmt(px)}" y="{HEIGHT - MARGIN + 18}" font-size="11" text-anchor="middle">{label}</text>'
        )
    pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
    body.append(f'<polyline points="{pts}" stroke="#d62728" stroke-width="2" fill="none"/>')
    for x, y in zip(xs, ys):
        body.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="#d62728"/>')
    return _svg(body)


def render_file(in_path: str, out_path: str) -> None:
    """GeoJSON input renders tracks; report CSV renders the error curve."""
    text = open(in_path, encoding="utf-8").read()
    if in_path.endswith(".csv"):
        by_offset = defaultdict(list)
        units = "km"
        for row in csv.DictReader(text.splitlines()):
            off = row.get("interval_offset", "")
            err = row.get("interval_error", "")
            if off and err:
                by_offset[float(off)].append(float(err))
        rows = [(off, sum(v) / len(v)) for off, v in sorted(by_offset.items())]
        svg = error_curve_svg(rows, units)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{in_path}: not valid JSON: {e}") from e
        svg = geojson_svg(doc)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(svg)

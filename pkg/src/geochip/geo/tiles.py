"""XYZ (slippy-map) tile scheme over the Web Mercator square."""

from __future__ import annotations

import math

from geochip.geo.proj import WEB_MERCATOR_RADIUS
from geochip.geo.types import TileXYZ

# half-extent of the Mercator square: pi * R
MERCATOR_HALF_EXTENT = math.pi * WEB_MERCATOR_RADIUS


def tile_bounds(t: TileXYZ) -> tuple[float, float, float, float]:
    """(west, south, east, north) of a tile in EPSG:3857 meters.

    Tile (0,0,0) spans the full square; y grows southward. Edges are computed
    from exact integer ratios so an edge shared between zoom levels is
    bit-identical (children partition their parent exactly).
    """
    n = 1 << t.z
    west = MERCATOR_HALF_EXTENT * ((2 * t.x - n) / n)
    east = MERCATOR_HALF_EXTENT * ((2 * (t.x + 1) - n) / n)
    north = MERCATOR_HALF_EXTENT * ((n - 2 * t.y) / n)
    south = MERCATOR_HALF_EXTENT * ((n - 2 * (t.y + 1)) / n)
    return west, south, east, north


def tiles_intersecting(bounds_3857: tuple[float, float, float, float], z: int):
    """All tiles at zoom z whose bounds intersect the given 3857 rectangle."""
    w, s, e, n = bounds_3857
    size = 1 << z
    span = 2.0 * MERCATOR_HALF_EXTENT / size

    x0 = max(0, int(math.floor((w + MERCATOR_HALF_EXTENT) / span)))
    x1 = min(size - 1, int(math.floor((e + MERCATOR_HALF_EXTENT) / span)))
    y0 = max(0, int(math.floor((MERCATOR_HALF_EXTENT - n) / span)))
    y1 = min(size - 1, int(math.floor((MERCATOR_HALF_EXTENT - s) / span)))

    out = []
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            out.append(TileXYZ(z, x, y))
    return out

"""XYZ tile rendering from prediction COGs.

Every tile pixel center is projected from Web Mercator through WGS84 into
the COG's CRS and sampled nearest-neighbor (top-left-corner pixel
convention, so containment == flooring). When the tile's ground resolution
is coarser than native, the matching overview level is sampled instead.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from geochip.errors import DataError
from geochip.geo import CrsId, PixelWindow, TileXYZ, mercator_to_wgs84, tile_bounds, transform_points
from geochip.raster import RasterHandle, read_window
from geochip.service.models import ModelEntry

TILE_SIZE = 256
MAX_ZOOM = 14
PREDICTION_NODATA = 255


def render_tile(handles: list[RasterHandle], entry: ModelEntry,
                tile: TileXYZ) -> bytes:
    """RGBA PNG for one tile address over the task's prediction COGs."""
    if tile.z > MAX_ZOOM:
        raise DataError(f"zoom {tile.z} beyond maximum {MAX_ZOOM}")
    west, south, east, north = tile_bounds(tile)
    span_x = (east - west) / TILE_SIZE
    span_y = (north - south) / TILE_SIZE
    xs = west + (np.arange(TILE_SIZE) + 0.5) * span_x
    ys = north - (np.arange(TILE_SIZE) + 0.5) * span_y
    grid_x, grid_y = np.meshgrid(xs, ys)

    lon, lat = mercator_to_wgs84(grid_x, grid_y)
    classes = np.full((TILE_SIZE, TILE_SIZE), PREDICTION_NODATA, dtype=np.uint8)
    filled = np.zeros((TILE_SIZE, TILE_SIZE), dtype=bool)

    for handle in handles:
        _sample_cog(handle, lon, lat, classes, filled)

    rgba = np.zeros((TILE_SIZE, TILE_SIZE, 4), dtype=np.uint8)
    for class_id, legend in entry.legend.items():
        mask = filled & (classes == class_id)
        rgba[mask, 0], rgba[mask, 1], rgba[mask, 2] = legend.rgb()
        rgba[mask, 3] = 255

    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def _sample_cog(handle: RasterHandle, lon: np.ndarray, lat: np.ndarray,
                classes: np.ndarray, filled: np.ndarray):
    meta = handle.meta
    x, y = transform_points(lon, lat, CrsId.wgs84(), meta.crs)
    gt = meta.geotransform
    frac_col = (np.asarray(x) - gt.origin_x) / gt.pixel_w
    frac_row = (np.asarray(y) - gt.origin_y) / gt.pixel_h

    level = _pick_level(handle, frac_col)
    scale = meta.width / handle.level_shape(level)[0]
    level_w, level_h = handle.level_shape(level)

    col = np.floor(frac_col / scale).astype(np.int64)
    row = np.floor(frac_row / scale).astype(np.int64)
    inside = (col >= 0) & (col < level_w) & (row >= 0) & (row < level_h) & ~filled
    if not inside.any():
        return

    c0, c1 = int(col[inside].min()), int(col[inside].max())
    r0, r1 = int(row[inside].min()), int(row[inside].max())
    window = PixelWindow(c0, r0, c1 - c0 + 1, r1 - r0 + 1)
    buf = read_window(handle, 1, window, level=level)

    values = buf.values[row[inside] - r0, col[inside] - c0]
    valid = values != PREDICTION_NODATA
    target = np.zeros_like(inside)
    target[inside] = valid
    classes[target] = values[valid]
    filled[target] = True


def _pick_level(handle: RasterHandle, frac_col: np.ndarray) -> int:
    """Coarsest overview still at least as fine as the tile's sampling step."""
    step = float(np.median(np.abs(np.diff(frac_col, axis=1))))
    if step <= 1.0 or handle.overview_count == 0:
        return 0
    level = 0
    base_w = handle.meta.width
    for k in range(1, handle.overview_count + 1):
        scale = base_w / handle.level_shape(k)[0]
        if scale <= step:
            level = k
    return level

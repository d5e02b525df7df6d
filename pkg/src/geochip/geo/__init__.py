"""Shared geospatial math: CRS transforms, geotransforms, XYZ tiling, bbox geometry."""

from geochip.geo.types import (
    CrsId,
    GeoBBox,
    GeoTransform,
    PixelWindow,
    TileXYZ,
    bbox_area_km2,
    spherical_rect_area_km2,
)
from geochip.geo.proj import (
    MERCATOR_MAX_LAT,
    WEB_MERCATOR_RADIUS,
    mercator_to_wgs84,
    utm_to_wgs84,
    wgs84_to_mercator,
    wgs84_to_utm,
    transform_points,
)
from geochip.geo.tiles import tile_bounds, tiles_intersecting

__all__ = [
    "CrsId",
    "GeoBBox",
    "GeoTransform",
    "PixelWindow",
    "TileXYZ",
    "bbox_area_km2",
    "spherical_rect_area_km2",
    "MERCATOR_MAX_LAT",
    "WEB_MERCATOR_RADIUS",
    "mercator_to_wgs84",
    "wgs84_to_mercator",
    "utm_to_wgs84",
    "wgs84_to_utm",
    "transform_points",
    "tile_bounds",
    "tiles_intersecting",
]

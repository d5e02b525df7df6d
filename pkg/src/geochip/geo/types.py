"""Core geospatial value types.

Pixel convention is top-left corner throughout: pixel (col, row) covers the
half-open world rectangle [ox + col*pw, ox + (col+1)*pw) x (oy + (row+1)*ph,
oy + row*ph] for a north-up transform (pw > 0, ph < 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from geochip.errors import DomainError

MEAN_EARTH_RADIUS_KM = 6371.0088

_UTM_NORTH_RANGE = range(32601, 32661)
_UTM_SOUTH_RANGE = range(32701, 32761)


@dataclass(frozen=True)
class GeoBBox:
    """WGS84 bounding box in decimal degrees."""

    west: float
    south: float
    east: float
    north: float

    def __post_init__(self):
        if not (self.west < self.east):
            raise DomainError(f"bbox west must be < east (got {self.west}, {self.east})")
        if not (-90.0 <= self.south < self.north <= 90.0):
            raise DomainError(
                f"bbox latitudes must satisfy -90 <= south < north <= 90 "
                f"(got {self.south}, {self.north})"
            )
        if self.west < -180.0 or self.east > 180.0:
            raise DomainError(f"bbox longitudes out of range: {self.west}, {self.east}")

    def contains(self, lon: float, lat: float) -> bool:
        return self.west <= lon <= self.east and self.south <= lat <= self.north

    def intersects(self, other: "GeoBBox") -> bool:
        return not (
            other.west > self.east
            or other.east < self.west
            or other.south > self.north
            or other.north < self.south
        )

    def centroid(self) -> tuple[float, float]:
        return (self.west + self.east) / 2.0, (self.south + self.north) / 2.0

    def as_list(self) -> list[float]:
        return [self.west, self.south, self.east, self.north]

    @classmethod
    def from_list(cls, vals) -> "GeoBBox":
        if len(vals) != 4:
            raise DomainError(f"bbox needs 4 values, got {len(vals)}")
        return cls(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]))


def spherical_rect_area_km2(west: float, south: float, east: float, north: float) -> float:
    """Spherical-earth area of a lon/lat rectangle in square kilometres.

    R^2 * dlon * (sin(north) - sin(south)); good to <0.6% vs the ellipsoid,
    which is plenty for an AOI guardrail. Accepts degenerate rectangles
    (zero width or height -> 0), unlike GeoBBox which forbids them.
    """
    dlon = math.radians(east - west)
    band = math.sin(math.radians(north)) - math.sin(math.radians(south))
    return MEAN_EARTH_RADIUS_KM**2 * dlon * band


def bbox_area_km2(box: GeoBBox) -> float:
    return spherical_rect_area_km2(box.west, box.south, box.east, box.north)


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel->world map restricted to axis-aligned north-up rasters."""

    origin_x: float
    pixel_w: float
    origin_y: float
    pixel_h: float
    row_rot: float = 0.0
    col_rot: float = 0.0

    def __post_init__(self):
        if not self.pixel_w > 0:
            raise DomainError(f"pixel_w must be > 0, got {self.pixel_w}")
        if not self.pixel_h < 0:
            raise DomainError(f"pixel_h must be < 0 (north-up), got {self.pixel_h}")
        if self.row_rot != 0.0 or self.col_rot != 0.0:
            raise DomainError("rotated geotransforms are not supported")

    def pixel_to_world(self, col, row):
        """Top-left corner of pixel (col, row) in world coordinates."""
        return self.origin_x + col * self.pixel_w, self.origin_y + row * self.pixel_h

    def world_to_pixel(self, x, y):
        """Containing pixel of a world point (floor; inverse of pixel_to_world)."""
        col = math.floor((x - self.origin_x) / self.pixel_w)
        row = math.floor((y - self.origin_y) / self.pixel_h)
        return col, row

    def world_to_pixel_frac(self, x, y):
        """Fractional pixel coordinates; floor of these is world_to_pixel."""
        return (x - self.origin_x) / self.pixel_w, (y - self.origin_y) / self.pixel_h

    def shifted(self, col_off: int, row_off: int) -> "GeoTransform":
        """Geotransform of a window whose origin pixel is (col_off, row_off)."""
        ox, oy = self.pixel_to_world(col_off, row_off)
        return GeoTransform(ox, self.pixel_w, oy, self.pixel_h)


@dataclass(frozen=True)
class CrsId:
    """EPSG code restricted to the whitelist this package supports.

    4326 (geographic), 3857 (spherical Mercator) and the WGS84 UTM zones
    (326xx north / 327xx south). Anything else is rejected at parse time.
    """

    code: int

    def __post_init__(self):
        if not self._supported(self.code):
            raise DomainError(f"unsupported CRS code EPSG:{self.code}")

    @staticmethod
    def _supported(code: int) -> bool:
        return code in (4326, 3857) or code in _UTM_NORTH_RANGE or code in _UTM_SOUTH_RANGE

    @classmethod
    def wgs84(cls) -> "CrsId":
        return cls(4326)

    @classmethod
    def web_mercator(cls) -> "CrsId":
        return cls(3857)

    @classmethod
    def utm(cls, zone: int, north: bool) -> "CrsId":
        if not 1 <= zone <= 60:
            raise DomainError(f"UTM zone must be 1..60, got {zone}")
        return cls((32600 if north else 32700) + zone)

    @property
    def is_geographic(self) -> bool:
        return self.code == 4326

    @property
    def is_utm(self) -> bool:
        return self.code in _UTM_NORTH_RANGE or self.code in _UTM_SOUTH_RANGE

    @property
    def utm_zone(self) -> int:
        if not self.is_utm:
            raise DomainError(f"EPSG:{self.code} is not a UTM CRS")
        return self.code % 100

    @property
    def utm_north(self) -> bool:
        if not self.is_utm:
            raise DomainError(f"EPSG:{self.code} is not a UTM CRS")
        return self.code in _UTM_NORTH_RANGE


@dataclass(frozen=True)
class PixelWindow:
    """Rectangular pixel region: offsets are top-left, sizes strictly positive."""

    col_off: int
    row_off: int
    width: int
    height: int

    def __post_init__(self):
        if self.col_off < 0 or self.row_off < 0:
            raise DomainError(f"window offsets must be non-negative: {self}")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"window size must be positive: {self}")

    @property
    def col_end(self) -> int:
        return self.col_off + self.width

    @property
    def row_end(self) -> int:
        return self.row_off + self.height

    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def fits_inside(self, width: int, height: int) -> bool:
        return self.col_end <= width and self.row_end <= height


@dataclass(frozen=True)
class TileXYZ:
    """Slippy-map tile address (z/x/y, origin top-left)."""

    z: int
    x: int
    y: int

    def __post_init__(self):
        if self.z < 0:
            raise DomainError(f"tile z must be >= 0, got {self.z}")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise DomainError(f"tile x/y out of range for z={self.z}: ({self.x}, {self.y})")

"""Map projections: spherical Web Mercator and WGS84 UTM (transverse Mercator).

All functions accept scalars or numpy arrays and broadcast elementwise; the
tile renderer pushes whole 256x256 coordinate grids through them.

The UTM implementation uses the classic truncated series (Snyder), which is
well below 1 cm error inside a zone with the standard k0 = 0.9996 and
500 km false easting.
"""

from __future__ import annotations

import numpy as np

from geochip.errors import DomainError
from geochip.geo.types import CrsId

WEB_MERCATOR_RADIUS = 6378137.0
# guard slightly above the exact tile-scheme limit of 85.05112878
MERCATOR_MAX_LAT = 85.06

# WGS84 ellipsoid
_A = 6378137.0
_F = 1.0 / 298.257223563
_E2 = _F * (2.0 - _F)
_EP2 = _E2 / (1.0 - _E2)
_K0 = 0.9996
_FALSE_EASTING = 500000.0
_FALSE_NORTHING_SOUTH = 10000000.0


def wgs84_to_mercator(lon, lat):
    """Forward spherical Mercator (EPSG:4326 -> EPSG:3857), in meters."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if np.any(np.abs(lat) > MERCATOR_MAX_LAT):
        raise DomainError(f"latitude beyond Mercator limit of +/-{MERCATOR_MAX_LAT} deg")
    x = WEB_MERCATOR_RADIUS * np.radians(lon)
    # asinh(tan(phi)) == ln(tan(pi/4 + phi/2)) but is exact at phi = 0
    y = WEB_MERCATOR_RADIUS * np.arcsinh(np.tan(np.radians(lat)))
    return _unwrap(x), _unwrap(y)


def mercator_to_wgs84(x, y):
    """Inverse spherical Mercator (EPSG:3857 -> EPSG:4326), in degrees."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lon = np.degrees(x / WEB_MERCATOR_RADIUS)
    lat = np.degrees(2.0 * np.arctan(np.exp(y / WEB_MERCATOR_RADIUS)) - np.pi / 2.0)
    return _unwrap(lon), _unwrap(lat)


def _central_meridian(zone: int) -> float:
    return (zone - 1) * 6 - 180 + 3


def _check_zone(zone: int):
    if not 1 <= int(zone) <= 60:
        raise DomainError(f"UTM zone must be 1..60, got {zone}")


def wgs84_to_utm(lon, lat, zone: int, north: bool):
    """Forward transverse Mercator onto the given UTM zone."""
    _check_zone(zone)
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)

    phi = np.radians(lat)
    lam = np.radians(lon)
    lam0 = np.radians(_central_meridian(int(zone)))

    sin_phi = np.sin(phi)
    cos_phi = np.cos(phi)
    tan_phi = np.tan(phi)

    n_rad = _A / np.sqrt(1.0 - _E2 * sin_phi**2)
    t = tan_phi**2
    c = _EP2 * cos_phi**2
    a_term = (lam - lam0) * cos_phi

    e2, e4, e6 = _E2, _E2**2, _E2**3
    m = _A * (
        (1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256) * phi
        - (3 * e2 / 8 + 3 * e4 / 32 + 45 * e6 / 1024) * np.sin(2 * phi)
        + (15 * e4 / 256 + 45 * e6 / 1024) * np.sin(4 * phi)
        - (35 * e6 / 3072) * np.sin(6 * phi)
    )

    easting = (
        _K0
        * n_rad
        * (
            a_term
            + (1 - t + c) * a_term**3 / 6
            + (5 - 18 * t + t**2 + 72 * c - 58 * _EP2) * a_term**5 / 120
        )
        + _FALSE_EASTING
    )
    northing = _K0 * (
        m
        + n_rad
        * tan_phi
        * (
            a_term**2 / 2
            + (5 - t + 9 * c + 4 * c**2) * a_term**4 / 24
            + (61 - 58 * t + t**2 + 600 * c - 330 * _EP2) * a_term**6 / 720
        )
    )
    if not north:
        northing = northing + _FALSE_NORTHING_SOUTH
    return _unwrap(easting), _unwrap(northing)


def utm_to_wgs84(easting, northing, zone: int, north: bool):
    """Inverse transverse Mercator from the given UTM zone to lon/lat degrees."""
    _check_zone(zone)
    x = np.asarray(easting, dtype=np.float64) - _FALSE_EASTING
    y = np.asarray(northing, dtype=np.float64)
    if not north:
        y = y - _FALSE_NORTHING_SOUTH

    m = y / _K0
    e2, e4, e6 = _E2, _E2**2, _E2**3
    mu = m / (_A * (1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256))
    e1 = (1 - np.sqrt(1 - e2)) / (1 + np.sqrt(1 - e2))

    phi1 = (
        mu
        + (3 * e1 / 2 - 27 * e1**3 / 32) * np.sin(2 * mu)
        + (21 * e1**2 / 16 - 55 * e1**4 / 32) * np.sin(4 * mu)
        + (151 * e1**3 / 96) * np.sin(6 * mu)
        + (1097 * e1**4 / 512) * np.sin(8 * mu)
    )

    sin_phi1 = np.sin(phi1)
    cos_phi1 = np.cos(phi1)
    tan_phi1 = np.tan(phi1)

    c1 = _EP2 * cos_phi1**2
    t1 = tan_phi1**2
    n1 = _A / np.sqrt(1 - e2 * sin_phi1**2)
    r1 = _A * (1 - e2) / np.power(1 - e2 * sin_phi1**2, 1.5)
    d = x / (n1 * _K0)

    phi = phi1 - (n1 * tan_phi1 / r1) * (
        d**2 / 2
        - (5 + 3 * t1 + 10 * c1 - 4 * c1**2 - 9 * _EP2) * d**4 / 24
        + (61 + 90 * t1 + 298 * c1 + 45 * t1**2 - 252 * _EP2 - 3 * c1**2) * d**6 / 720
    )
    lam = (
        d
        - (1 + 2 * t1 + c1) * d**3 / 6
        + (5 - 2 * c1 + 28 * t1 - 3 * c1**2 + 8 * _EP2 + 24 * t1**2) * d**5 / 120
    ) / cos_phi1

    lon = _central_meridian(int(zone)) + np.degrees(lam)
    lat = np.degrees(phi)
    return _unwrap(lon), _unwrap(lat)


def transform_points(x, y, src: CrsId, dst: CrsId):
    """Transform coordinates between any two whitelisted CRSs via WGS84."""
    if src == dst:
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    lon, lat = _to_wgs84(x, y, src)
    return _from_wgs84(lon, lat, dst)


def _to_wgs84(x, y, crs: CrsId):
    if crs.is_geographic:
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if crs.code == 3857:
        return mercator_to_wgs84(x, y)
    return utm_to_wgs84(x, y, crs.utm_zone, crs.utm_north)


def _from_wgs84(lon, lat, crs: CrsId):
    if crs.is_geographic:
        return np.asarray(lon, dtype=np.float64), np.asarray(lat, dtype=np.float64)
    if crs.code == 3857:
        return wgs84_to_mercator(lon, lat)
    return wgs84_to_utm(lon, lat, crs.utm_zone, crs.utm_north)


def _unwrap(v: np.ndarray):
    """Return a python float for 0-d results, else the array unchanged."""
    return float(v) if np.ndim(v) == 0 else v

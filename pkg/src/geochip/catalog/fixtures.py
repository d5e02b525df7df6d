"""Deterministic fixture catalogs: STAC items plus synthetic GeoTIFF assets.

Everything derives from (seed, layout): band pixels from per-asset child
seeds, cloud blobs from per-granule child seeds, JSON dumped with sorted
keys. Two runs with the same inputs produce byte-identical trees, which the
offline pipeline tests and the determinism acceptance check rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geochip.geo import CrsId, GeoTransform, utm_to_wgs84
from geochip.raster import RasterMeta, write_geotiff

HLS_BANDS = ["B02", "B03", "B04", "B8A", "B11", "B12"]
CLOUD_BIT = 1  # HLS v2.0 Fmask: bit 1 = cloud


@dataclass(frozen=True)
class FixtureTileSpec:
    tile_id: str = "T31TCJ"
    utm_zone: int = 31
    utm_north: bool = True
    origin_x: float = 600000.0
    origin_y: float = 4200000.0
    size_px: int = 512
    pixel_size: float = 30.0

    @property
    def crs(self) -> CrsId:
        return CrsId.utm(self.utm_zone, self.utm_north)

    @property
    def geotransform(self) -> GeoTransform:
        return GeoTransform(self.origin_x, self.pixel_size, self.origin_y, -self.pixel_size)

    def footprint_wgs84(self) -> list[float]:
        """Slightly padded lon/lat bbox of the tile corners."""
        extent = self.size_px * self.pixel_size
        xs = [self.origin_x, self.origin_x + extent]
        ys = [self.origin_y - extent, self.origin_y]
        lons, lats = [], []
        for x in xs:
            for y in ys:
                lon, lat = utm_to_wgs84(x, y, self.utm_zone, self.utm_north)
                lons.append(lon)
                lats.append(lat)
        pad = 1e-4
        return [min(lons) - pad, min(lats) - pad, max(lons) + pad, max(lats) + pad]


@dataclass(frozen=True)
class FixtureLayout:
    dates: tuple[str, ...]
    collection: str = "hls-fixture"
    tiles: tuple[FixtureTileSpec, ...] = (FixtureTileSpec(),)
    bands: tuple[str, ...] = tuple(HLS_BANDS)
    mask_band: str = "Fmask"
    cloud_fractions: tuple[float, ...] = ()  # per date; empty -> all 0.0
    night_dates: tuple[str, ...] = ()  # granules flagged as non-daytime
    value_mode: str = "random"  # or "constant"
    nodata: int = -9999

    def cloud_fraction_for(self, date_idx: int) -> float:
        if not self.cloud_fractions:
            return 0.0
        return self.cloud_fractions[min(date_idx, len(self.cloud_fractions) - 1)]


def generate_fixture(seed: int, out_dir, layout: FixtureLayout) -> Path:
    """Write the catalog tree; returns the catalog root."""
    root = Path(out_dir)
    items_dir = root / "collections" / layout.collection / "items"
    assets_root = root / "assets"
    items_dir.mkdir(parents=True, exist_ok=True)
    assets_root.mkdir(parents=True, exist_ok=True)

    for tile_idx, tile in enumerate(layout.tiles):
        for date_idx, date in enumerate(layout.dates):
            granule_id = f"FX.{tile.tile_id}.{date.replace('-', '')}T103000.v1"
            asset_dir = assets_root / granule_id
            asset_dir.mkdir(parents=True, exist_ok=True)

            meta = RasterMeta(
                width=tile.size_px, height=tile.size_px, band_count=1, dtype="int16",
                geotransform=tile.geotransform, crs=tile.crs, nodata=layout.nodata,
                tiled=True, block_size=256, compression="deflate")

            assets = {}
            for band_idx, band in enumerate(layout.bands):
                values = _band_values(seed, layout, tile_idx, date_idx, band_idx, tile.size_px)
                band_path = asset_dir / f"{band}.tif"
                write_geotiff(band_path, [values], meta)
                assets[band] = {"href": _rel_href(items_dir, band_path)}

            cloud_fraction = layout.cloud_fraction_for(date_idx)
            mask = _cloud_mask(seed, tile_idx, date_idx, tile.size_px, cloud_fraction)
            mask_meta = RasterMeta(
                width=tile.size_px, height=tile.size_px, band_count=1, dtype="uint8",
                geotransform=tile.geotransform, crs=tile.crs, nodata=None,
                tiled=True, block_size=256, compression="deflate")
            mask_path = asset_dir / f"{layout.mask_band}.tif"
            write_geotiff(mask_path, [mask], mask_meta)
            assets[layout.mask_band] = {"href": _rel_href(items_dir, mask_path)}

            doc = {
                "type": "Feature",
                "stac_version": "1.0.0",
                "id": granule_id,
                "collection": layout.collection,
                "bbox": tile.footprint_wgs84(),
                "geometry": None,
                "properties": {
                    "datetime": f"{date}T10:30:00Z",
                    "eo:cloud_cover": round(100.0 * cloud_fraction, 2),
                    "geochip:daytime": date not in layout.night_dates,
                },
                "assets": assets,
                "links": [],
            }
            (items_dir / f"{granule_id}.json").write_text(
                json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return root


def _rel_href(items_dir: Path, asset_path: Path) -> str:
    import os
    return os.path.relpath(asset_path, items_dir)


def _band_values(seed, layout, tile_idx, date_idx, band_idx, size) -> np.ndarray:
    if layout.value_mode == "constant":
        value = 100 * (date_idx + 1) + band_idx
        return np.full((size, size), value, dtype=np.int16)
    rng = np.random.default_rng([seed, tile_idx, date_idx, band_idx])
    return rng.integers(0, 10000, size=(size, size)).astype(np.int16)


def _cloud_mask(seed, tile_idx, date_idx, size, fraction) -> np.ndarray:
    """uint8 Fmask-style bitfield with seeded circular cloud blobs.

    Blobs accumulate until coverage reaches the requested fraction; generated
    coverage lands within a couple of percentage points for fractions that
    leave room for discrete blobs.
    """
    mask = np.zeros((size, size), dtype=np.uint8)
    if fraction <= 0.0:
        return mask
    rng = np.random.default_rng([seed, tile_idx, date_idx, 0xC10D])
    yy, xx = np.mgrid[0:size, 0:size]
    covered = np.zeros((size, size), dtype=bool)
    target = min(fraction, 0.95)
    radius = max(4, size // 16)
    for _ in range(10000):
        if covered.mean() >= target:
            break
        cy = rng.integers(0, size)
        cx = rng.integers(0, size)
        r = rng.integers(radius // 2, radius + 1)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        # trim the final blob so the coverage does not badly overshoot
        overshoot = covered.mean() + blob.mean() - target
        if overshoot > 0.01:
            blob &= (yy - cy) ** 2 + (xx - cx) ** 2 <= (r // 2) ** 2
        covered |= blob
    mask[covered] |= 1 << CLOUD_BIT
    return mask

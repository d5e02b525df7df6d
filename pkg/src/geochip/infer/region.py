"""Region inference pipeline.

Three stages with on-disk handoff so the service can resume mid-task:
  1. chips_for_region  - enumerate and extract full grid cells over the AOI
  2. predict_region    - per-chip argmax, stitched into per-tile mosaics
  3. write_prediction_cog - COG conversion plus a class-area summary
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date as Date
from datetime import timedelta
from pathlib import Path

import numpy as np

from geochip.catalog import Catalog, CatalogSource, SearchQuery
from geochip.errors import DataError, NoImageryError
from geochip.geo import CrsId, GeoBBox, GeoTransform, PixelWindow, transform_points
from geochip.raster import RasterMeta, convert_to_cog, open_raster, read_window, write_geotiff
from geochip.chips import ChipSpec, Observation, apply_cloud_mask, assign_timesteps, filter_granules
from geochip.chips.extract import AssetReader, extract_chip, read_mask_stack, tile_grid_meta
from geochip.chips.types import CHIP_NODATA
from geochip.model.data import DEFAULT_SCALE
from geochip.model.vit import VitSegmentation

from datetime import datetime, time, timezone

PREDICTION_NODATA = 255


@dataclass
class TileGrid:
    tile_id: str
    width: int
    height: int
    geotransform: GeoTransform
    crs: CrsId


@dataclass
class RegionChip:
    tile_id: str
    chip_ix: int
    chip_iy: int
    values: np.ndarray  # (T, C, H, W) int16
    valid: np.ndarray  # bool, same shape

    @property
    def size(self) -> int:
        return self.values.shape[-1]


@dataclass
class PredictionMosaic:
    tile_id: str
    classes: np.ndarray  # uint8, PREDICTION_NODATA outside coverage
    geotransform: GeoTransform
    crs: CrsId


def chips_for_region(bbox: GeoBBox, date: Date, spec: ChipSpec,
                     catalog_src: CatalogSource
                     ) -> tuple[list[RegionChip], dict[str, TileGrid]]:
    """Extract every full chip grid cell intersecting the AOI, per tile.

    Cloudy pixels are flagged in the validity mask, never dropped; there is
    no QC gate because there are no labels. Raises NoImageryError naming the
    candidate tiles when no tile has a complete timestep assignment.
    """
    catalog = Catalog.open(catalog_src)
    try:
        start = date - timedelta(days=(spec.timesteps - 1) * spec.step_days
                                 + spec.tolerance_days)
        end = date + timedelta(days=spec.tolerance_days)
        q = SearchQuery(
            collection=_collection_name(catalog, spec),
            bbox=bbox,
            datetime_start=datetime.combine(start, time.min, tzinfo=timezone.utc),
            datetime_end=datetime.combine(end, time.max, tzinfo=timezone.utc),
        )
        granules = catalog.search(q)
    finally:
        catalog.close()

    by_tile: dict[str, list] = {}
    for g in granules:
        by_tile.setdefault(g.tile_id, []).append(g)
    if not by_tile:
        raise NoImageryError([])

    lon_c, lat_c = bbox.centroid()
    centroid = Observation(lon=lon_c, lat=lat_c, date=date, label=0)

    chips: list[RegionChip] = []
    grids: dict[str, TileGrid] = {}
    assigned_any = False
    for tile_id in sorted(by_tile):
        kept = filter_granules(by_tile[tile_id], spec, point=None)
        gset = assign_timesteps(centroid, kept, spec)
        if gset is None:
            continue
        assigned_any = True
        with AssetReader() as reader:
            meta = tile_grid_meta(gset, spec, reader)
            grids[tile_id] = TileGrid(tile_id, meta.width, meta.height,
                                      meta.geotransform, meta.crs)
            for ix, iy, window in _cells_intersecting(bbox, meta, spec.chip_size):
                chip = extract_chip(gset, window, spec, reader)
                masks = read_mask_stack(gset, window, spec, reader)
                chip = apply_cloud_mask(chip, masks, spec)
                chips.append(RegionChip(tile_id=tile_id, chip_ix=ix, chip_iy=iy,
                                        values=chip.values, valid=chip.valid))
    if not assigned_any:
        raise NoImageryError(sorted(by_tile))
    return chips, grids


def _collection_name(catalog, spec) -> str:
    from geochip.catalog.client import LocalCatalog
    if isinstance(catalog, LocalCatalog):
        coll_dir = catalog.root / "collections"
        names = sorted(p.name for p in coll_dir.iterdir() if p.is_dir()) \
            if coll_dir.is_dir() else []
        if len(names) == 1:
            return names[0]
    return spec.profile_id


def _cells_intersecting(bbox: GeoBBox, meta: RasterMeta, chip_size: int):
    """Full grid cells whose windows intersect the AOI projected on the tile."""
    # densified boundary ring survives projection curvature
    lons = np.linspace(bbox.west, bbox.east, 16)
    lats = np.linspace(bbox.south, bbox.north, 16)
    ring_lon = np.concatenate([lons, np.full(16, bbox.east), lons[::-1],
                               np.full(16, bbox.west)])
    ring_lat = np.concatenate([np.full(16, bbox.south), lats, np.full(16, bbox.north),
                               lats[::-1]])
    xs, ys = transform_points(ring_lon, ring_lat, CrsId.wgs84(), meta.crs)
    gt = meta.geotransform
    cols = (np.asarray(xs) - gt.origin_x) / gt.pixel_w
    rows = (np.asarray(ys) - gt.origin_y) / gt.pixel_h
    col_lo = max(0.0, float(cols.min()))
    col_hi = min(float(meta.width), float(cols.max()))
    row_lo = max(0.0, float(rows.min()))
    row_hi = min(float(meta.height), float(rows.max()))
    if col_lo >= col_hi or row_lo >= row_hi:
        return
    ix0 = int(col_lo // chip_size)
    ix1 = int(np.ceil(col_hi / chip_size)) - 1
    iy0 = int(row_lo // chip_size)
    iy1 = int(np.ceil(row_hi / chip_size)) - 1
    for iy in range(iy0, iy1 + 1):
        for ix in range(ix0, ix1 + 1):
            window = PixelWindow(ix * chip_size, iy * chip_size, chip_size, chip_size)
            if window.fits_inside(meta.width, meta.height):
                yield ix, iy, window


def predict_region(chips: list[RegionChip], model: VitSegmentation,
                   grids: dict[str, TileGrid],
                   scale: float = DEFAULT_SCALE) -> dict[str, PredictionMosaic]:
    """Argmax class per pixel; any-timestep-invalid pixels become nodata."""
    if chips:
        t, c, h, w = chips[0].values.shape
        cfg = model.cfg
        if (t, c, h, w) != (cfg.timesteps, cfg.in_bands, cfg.image_size, cfg.image_size):
            raise DataError(
                f"checkpoint expects {(cfg.timesteps, cfg.in_bands, cfg.image_size, cfg.image_size)} "
                f"chips, region produced {(t, c, h, w)}")

    by_tile: dict[str, list[RegionChip]] = {}
    for chip in chips:
        by_tile.setdefault(chip.tile_id, []).append(chip)

    mosaics: dict[str, PredictionMosaic] = {}
    for tile_id, members in sorted(by_tile.items()):
        grid = grids[tile_id]
        size = members[0].size
        ix_vals = [m.chip_ix for m in members]
        iy_vals = [m.chip_iy for m in members]
        col0 = min(ix_vals) * size
        row0 = min(iy_vals) * size
        width = (max(ix_vals) + 1) * size - col0
        height = (max(iy_vals) + 1) * size - row0
        canvas = np.full((height, width), PREDICTION_NODATA, dtype=np.uint8)

        for m in sorted(members, key=lambda r: (r.chip_iy, r.chip_ix)):
            x = m.values.astype(np.float32) / scale
            x[~m.valid] = 0.0
            classes = model.predict_classes(x[None])[0]
            invalid = ~m.valid.all(axis=(0, 1))
            classes = classes.copy()
            classes[invalid] = PREDICTION_NODATA
            r0 = m.chip_iy * size - row0
            c0 = m.chip_ix * size - col0
            canvas[r0:r0 + size, c0:c0 + size] = classes

        mosaics[tile_id] = PredictionMosaic(
            tile_id=tile_id,
            classes=canvas,
            geotransform=grid.geotransform.shifted(col0, row0),
            crs=grid.crs)
    return mosaics


def write_prediction_cog(mosaics: dict[str, PredictionMosaic], out_dir,
                         num_classes: int) -> dict:
    """One COG per tile plus summary.json with per-class pixels and km^2."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cog_paths = []
    class_pixels = np.zeros(num_classes, dtype=np.int64)
    nodata_pixels = 0
    total_pixels = 0
    pixel_area_km2 = None

    for tile_id in sorted(mosaics):
        m = mosaics[tile_id]
        gt = m.geotransform
        pixel_area_km2 = (gt.pixel_w * -gt.pixel_h) / 1e6
        meta = RasterMeta(
            width=m.classes.shape[1], height=m.classes.shape[0], band_count=1,
            dtype="uint8", geotransform=gt, crs=m.crs, nodata=PREDICTION_NODATA,
            tiled=False, compression="deflate",
            tags={"geochip:kind": "prediction"})
        plain = out / f"prediction_{tile_id}.tif"
        write_geotiff(plain, [m.classes], meta)
        cog_path = out / f"prediction_{tile_id}_cog.tif"
        convert_to_cog(plain, cog_path)
        plain.unlink()
        cog_paths.append(str(cog_path))

        total_pixels += m.classes.size
        nodata_pixels += int((m.classes == PREDICTION_NODATA).sum())
        for k in range(num_classes):
            class_pixels[k] += int((m.classes == k).sum())

    summary = {
        "tiles": [Path(p).name for p in cog_paths],
        "pixel_area_km2": pixel_area_km2,
        "total_pixels": int(total_pixels),
        "nodata_pixels": int(nodata_pixels),
        "classes": {
            str(k): {
                "pixels": int(class_pixels[k]),
                "km2": float(class_pixels[k] * (pixel_area_km2 or 0.0)),
            } for k in range(num_classes)
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return {"cog_paths": cog_paths, "summary": summary}


def run_inference(bbox: GeoBBox, date: Date, spec: ChipSpec,
                  catalog_src: CatalogSource, model: VitSegmentation,
                  out_dir) -> dict:
    chips, grids = chips_for_region(bbox, date, spec, catalog_src)
    mosaics = predict_region(chips, model, grids)
    return write_prediction_cog(mosaics, out_dir, model.cfg.num_classes)


# ------------------------------------------------------- stage serialization

def save_region_chips(chips: list[RegionChip], grids: dict[str, TileGrid], out_dir):
    """Persist stage-1 output so later stages can restart from disk."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"grids": {}, "chips": []}
    for tile_id, g in grids.items():
        index["grids"][tile_id] = {
            "width": g.width, "height": g.height, "crs": g.crs.code,
            "geotransform": [g.geotransform.origin_x, g.geotransform.pixel_w,
                             g.geotransform.origin_y, g.geotransform.pixel_h],
        }
    for i, chip in enumerate(chips):
        t, c, h, w = chip.values.shape
        grid = grids[chip.tile_id]
        gt = grid.geotransform.shifted(chip.chip_ix * w, chip.chip_iy * h)
        meta = RasterMeta(width=w, height=h, band_count=t * c, dtype="int16",
                          geotransform=gt, crs=grid.crs, nodata=CHIP_NODATA,
                          tiled=False, compression="deflate",
                          tags={"geochip:timesteps": str(t)})
        name = f"chip_{i:05d}.tif"
        values = np.where(chip.valid, chip.values, np.int16(CHIP_NODATA))
        write_geotiff(out / name, [values[ti, ci] for ti in range(t) for ci in range(c)],
                      meta)
        index["chips"].append({"path": name, "tile_id": chip.tile_id,
                               "chip_ix": chip.chip_ix, "chip_iy": chip.chip_iy,
                               "timesteps": t, "bands": c})
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_region_chips(chips_dir) -> tuple[list[RegionChip], dict[str, TileGrid]]:
    root = Path(chips_dir)
    index = json.loads((root / "index.json").read_text())
    grids = {}
    for tile_id, g in index["grids"].items():
        ox, pw, oy, ph = g["geotransform"]
        grids[tile_id] = TileGrid(tile_id, g["width"], g["height"],
                                  GeoTransform(ox, pw, oy, ph), CrsId(g["crs"]))
    chips = []
    for entry in index["chips"]:
        with open_raster(root / entry["path"]) as handle:
            meta = handle.meta
            t, c = entry["timesteps"], entry["bands"]
            values = np.zeros((t, c, meta.height, meta.width), dtype=np.int16)
            valid = np.zeros(values.shape, dtype=bool)
            for ti in range(t):
                for ci in range(c):
                    buf = read_window(handle, ti * c + ci + 1,
                                      PixelWindow(0, 0, meta.width, meta.height))
                    values[ti, ci] = buf.values
                    valid[ti, ci] = buf.valid_mask
        chips.append(RegionChip(tile_id=entry["tile_id"], chip_ix=entry["chip_ix"],
                                chip_iy=entry["chip_iy"], values=values, valid=valid))
    return chips, grids


def save_mosaics(mosaics: dict[str, PredictionMosaic], out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for tile_id in sorted(mosaics):
        m = mosaics[tile_id]
        meta = RasterMeta(width=m.classes.shape[1], height=m.classes.shape[0],
                          band_count=1, dtype="uint8", geotransform=m.geotransform,
                          crs=m.crs, nodata=PREDICTION_NODATA, tiled=False,
                          compression="deflate")
        name = f"mosaic_{tile_id}.tif"
        write_geotiff(out / name, [m.classes], meta)
        index.append({"path": name, "tile_id": tile_id})
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")


def load_mosaics(mosaic_dir) -> dict[str, PredictionMosaic]:
    root = Path(mosaic_dir)
    index = json.loads((root / "index.json").read_text())
    out = {}
    for entry in index:
        with open_raster(root / entry["path"]) as handle:
            meta = handle.meta
            values = read_window(handle, 1,
                                 PixelWindow(0, 0, meta.width, meta.height)).values
        out[entry["tile_id"]] = PredictionMosaic(
            tile_id=entry["tile_id"], classes=values.astype(np.uint8),
            geotransform=meta.geotransform, crs=meta.crs)
    return out

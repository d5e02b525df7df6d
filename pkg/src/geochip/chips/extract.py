"""Pixel extraction from granule assets and chip/label GeoTIFF serialization."""

from __future__ import annotations

import numpy as np

from geochip.errors import DataError
from geochip.geo import PixelWindow
from geochip.raster import RasterMeta, open_raster, read_window, write_geotiff
from geochip.chips.types import (
    CHIP_NODATA,
    IGNORE_LABEL,
    ChipSpec,
    ChipTensor,
    GranuleSet,
    SegmentationMap,
)

BAND_ORDER_TAG = "time_major"


class AssetReader:
    """Caches open raster handles per asset URI for the lifetime of a group."""

    def __init__(self):
        self._handles = {}

    def handle(self, uri: str):
        h = self._handles.get(uri)
        if h is None:
            h = open_raster(uri)
            self._handles[uri] = h
        return h

    def close(self):
        for h in self._handles.values():
            h.close()
        self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_grid(ref: RasterMeta | None, meta: RasterMeta, uri: str) -> RasterMeta:
    if ref is None:
        return meta
    if meta.crs != ref.crs:
        raise DataError(f"{uri}: CRS {meta.crs.code} differs from group CRS {ref.crs.code}")
    if meta.geotransform != ref.geotransform or (meta.width, meta.height) != (ref.width, ref.height):
        raise DataError(f"{uri}: pixel grid differs within granule set")
    return ref


def extract_chip(gset: GranuleSet, window: PixelWindow, spec: ChipSpec,
                 reader: AssetReader) -> ChipTensor:
    """Assemble the T x C x H x W stack for one window, oldest timestep first."""
    t_steps = len(gset)
    c_bands = len(spec.bands)
    values = np.full((t_steps, c_bands, window.height, window.width),
                     CHIP_NODATA, dtype=np.int16)
    valid = np.zeros(values.shape, dtype=bool)
    ref: RasterMeta | None = None
    for t, granule in enumerate(gset.granules):
        for c, band in enumerate(spec.bands):
            uri = granule.assets[band]
            handle = reader.handle(uri)
            ref = _check_grid(ref, handle.meta, uri)
            buf = read_window(handle, 1, window)
            values[t, c] = buf.values
            valid[t, c] = buf.valid_mask
    assert ref is not None
    gt = ref.geotransform.shifted(window.col_off, window.row_off)
    return ChipTensor(values=values, valid=valid, geotransform=gt, crs=ref.crs)


def read_mask_stack(gset: GranuleSet, window: PixelWindow, spec: ChipSpec,
                    reader: AssetReader) -> np.ndarray:
    """T x H x W uint8 quality bitfields for the window."""
    out = np.zeros((len(gset), window.height, window.width), dtype=np.uint8)
    for t, granule in enumerate(gset.granules):
        handle = reader.handle(granule.assets[spec.mask_band])
        out[t] = read_window(handle, 1, window).values
    return out


def tile_grid_meta(gset: GranuleSet, spec: ChipSpec, reader: AssetReader) -> RasterMeta:
    """Grid definition of the granule set's tile (from its first band asset)."""
    first = gset.granules[0]
    return reader.handle(first.assets[spec.bands[0]]).meta


def write_chip_pair(chip: ChipTensor, seg: SegmentationMap, spec: ChipSpec,
                    chip_path, label_path):
    """Serialize one pair: time-major int16 chip + uint8 label map."""
    t_steps, c_bands, h, w = chip.shape
    bands = [chip.values[t, c] for t in range(t_steps) for c in range(c_bands)]
    chip_meta = RasterMeta(
        width=w, height=h, band_count=t_steps * c_bands, dtype="int16",
        geotransform=chip.geotransform, crs=chip.crs, nodata=CHIP_NODATA,
        tiled=False, compression="deflate",
        tags={
            "geochip:timesteps": str(t_steps),
            "geochip:bands": ",".join(spec.bands),
            "geochip:band_order": BAND_ORDER_TAG,
        })
    write_geotiff(chip_path, bands, chip_meta)

    label_meta = RasterMeta(
        width=w, height=h, band_count=1, dtype="uint8",
        geotransform=chip.geotransform, crs=chip.crs, nodata=IGNORE_LABEL,
        tiled=False, compression="deflate",
        tags={"geochip:num_classes": str(spec.num_classes)})
    write_geotiff(label_path, [seg.labels], label_meta)


def load_chip_pair(chip_path, label_path) -> tuple[ChipTensor, SegmentationMap]:
    """Read back a serialized pair, reshaping bands by the time-major tags."""
    with open_raster(chip_path) as h:
        meta = h.meta
        t_steps = int(meta.tags.get("geochip:timesteps", "1"))
        if meta.band_count % t_steps != 0:
            raise DataError(f"{chip_path}: band count {meta.band_count} not divisible "
                            f"by timesteps {t_steps}")
        c_bands = meta.band_count // t_steps
        window = PixelWindow(0, 0, meta.width, meta.height)
        values = np.zeros((t_steps, c_bands, meta.height, meta.width), dtype=np.int16)
        valid = np.zeros(values.shape, dtype=bool)
        for t in range(t_steps):
            for c in range(c_bands):
                buf = read_window(h, t * c_bands + c + 1, window)
                values[t, c] = buf.values
                valid[t, c] = buf.valid_mask
        chip = ChipTensor(values=values, valid=valid,
                          geotransform=meta.geotransform, crs=meta.crs)
    with open_raster(label_path) as h:
        window = PixelWindow(0, 0, h.meta.width, h.meta.height)
        labels = read_window(h, 1, window).values.astype(np.uint8)
    return chip, SegmentationMap(labels)

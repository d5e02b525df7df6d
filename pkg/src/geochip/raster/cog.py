"""Cloud-Optimized GeoTIFF conversion: retile, build overviews, header-first layout."""

from __future__ import annotations

import numpy as np

from geochip.geo import PixelWindow
from geochip.raster.meta import RasterMeta
from geochip.raster.reader import open_raster, read_window
from geochip.raster.writer import TiffPage, write_tiff_pages

COG_BLOCK = 256
# long edge at or below this stops the pyramid
MIN_OVERVIEW_EDGE = 256


def convert_to_cog(path_in, path_out) -> RasterMeta:
    """Rewrite a GeoTIFF as a 256-tiled COG with power-of-two overviews.

    Full resolution pixels are copied bit-exactly. Overviews use 2x2 block
    averaging for continuous dtypes and top-left subsampling for uint8
    (categorical) rasters, so categorical overviews never invent values.
    """
    with open_raster(path_in) as src:
        meta = src.meta
        full = [
            read_window(src, b, PixelWindow(0, 0, meta.width, meta.height)).values
            for b in range(1, meta.band_count + 1)
        ]

    categorical = meta.dtype == "uint8"
    nodata = meta.nodata

    pages = [TiffPage(full, tiled=True, block_size=COG_BLOCK)]
    level = full
    while max(level[0].shape) > MIN_OVERVIEW_EDGE:
        level = [_downsample(a, categorical, nodata) for a in level]
        pages.append(TiffPage(level, tiled=True, block_size=COG_BLOCK, reduced=True))

    out_meta = RasterMeta(
        width=meta.width, height=meta.height, band_count=meta.band_count,
        dtype=meta.dtype, geotransform=meta.geotransform, crs=meta.crs,
        nodata=meta.nodata, tiled=True, block_size=COG_BLOCK,
        compression="deflate", tags=dict(meta.tags))
    write_tiff_pages(path_out, pages, out_meta)
    return out_meta


def _downsample(arr: np.ndarray, categorical: bool, nodata) -> np.ndarray:
    if categorical:
        return np.ascontiguousarray(arr[::2, ::2])

    h, w = arr.shape
    ph, pw = -(-h // 2) * 2, -(-w // 2) * 2
    work = np.zeros((ph, pw), dtype=np.float64)
    work[:h, :w] = arr
    in_bounds = np.zeros((ph, pw), dtype=bool)
    in_bounds[:h, :w] = True
    if nodata is not None:
        in_bounds[:h, :w] &= arr != arr.dtype.type(nodata)

    quads = np.stack([work[0::2, 0::2], work[0::2, 1::2],
                      work[1::2, 0::2], work[1::2, 1::2]])
    valid = np.stack([in_bounds[0::2, 0::2], in_bounds[0::2, 1::2],
                      in_bounds[1::2, 0::2], in_bounds[1::2, 1::2]])
    counts = valid.sum(axis=0)
    sums = np.where(valid, quads, 0.0).sum(axis=0)
    mean = sums / np.maximum(counts, 1)
    fill = float(nodata) if nodata is not None else 0.0
    out = np.where(counts == 0, fill, mean)
    if arr.dtype.kind in "iu":
        out = np.rint(out)
    return out.astype(arr.dtype)

"""Raster metadata and pixel-buffer types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geochip.errors import DataError
from geochip.geo import CrsId, GeoTransform, PixelWindow

# dtype name -> (numpy dtype, bits per sample, TIFF SampleFormat)
DTYPES = {
    "uint8": (np.dtype("<u1"), 8, 1),
    "uint16": (np.dtype("<u2"), 16, 1),
    "int16": (np.dtype("<i2"), 16, 2),
    "float32": (np.dtype("<f4"), 32, 3),
}


def dtype_name(arr_dtype) -> str:
    for name, (np_dtype, _, _) in DTYPES.items():
        if np.dtype(arr_dtype) == np_dtype:
            return name
    raise DataError(f"unsupported raster dtype {arr_dtype}")


@dataclass
class RasterMeta:
    """Everything about a raster except its pixels."""

    width: int
    height: int
    band_count: int
    dtype: str
    geotransform: GeoTransform
    crs: CrsId
    nodata: float | None = None
    tiled: bool = False
    block_size: int | None = None
    compression: str = "deflate"  # "none" or "deflate"
    tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"raster dimensions must be positive: {self.width}x{self.height}")
        if self.band_count <= 0:
            raise DataError("band_count must be positive")
        if self.dtype not in DTYPES:
            raise DataError(f"unsupported dtype {self.dtype!r}")
        if self.tiled and self.block_size not in (256, 512):
            raise DataError(f"tiled rasters need block_size 256 or 512, got {self.block_size}")
        if self.compression not in ("none", "deflate"):
            raise DataError(f"unsupported compression {self.compression!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return DTYPES[self.dtype][0]


@dataclass
class BandBuffer:
    """One band's pixels for one window, with per-pixel validity."""

    window: PixelWindow
    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.window.shape():
            raise DataError(
                f"values shape {self.values.shape} != window shape {self.window.shape()}")
        if self.valid_mask.shape != self.values.shape:
            raise DataError("valid_mask shape differs from values shape")

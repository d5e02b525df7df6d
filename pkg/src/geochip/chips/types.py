"""Chip pipeline domain types."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date as Date

import numpy as np

from geochip.errors import DataError
from geochip.catalog import GranuleRef
from geochip.geo import CrsId, GeoTransform

IGNORE_LABEL = 255
CHIP_NODATA = -9999


@dataclass(frozen=True)
class Observation:
    """One geolocated, dated, labeled point."""

    lon: float
    lat: float
    date: Date
    label: int

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise DataError(f"longitude out of range: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise DataError(f"latitude out of range: {self.lat}")
        if self.label < 0 or self.label >= IGNORE_LABEL:
            raise DataError(f"label must be in [0, {IGNORE_LABEL}): {self.label}")


@dataclass(frozen=True)
class ProductProfile:
    """Satellite product conventions: band set, mask semantics, nodata."""

    profile_id: str
    default_bands: tuple[str, ...]
    mask_band: str
    bad_mask_bits: tuple[int, ...]
    nodata: int
    daytime_property: str

    def bad_bits_value(self) -> int:
        v = 0
        for bit in self.bad_mask_bits:
            v |= 1 << bit
        return v


# cloud (1), adjacent cloud/shadow (2), cloud shadow (3) per the HLS v2.0
# Fmask byte layout
HLS_LIKE = ProductProfile(
    profile_id="hls",
    default_bands=("B02", "B03", "B04", "B8A", "B11", "B12"),
    mask_band="Fmask",
    bad_mask_bits=(1, 2, 3),
    nodata=CHIP_NODATA,
    daytime_property="geochip:daytime",
)

PROFILES = {HLS_LIKE.profile_id: HLS_LIKE}


@dataclass(frozen=True)
class ChipSpec:
    """User-facing pipeline configuration."""

    timesteps: int = 3
    step_days: int = 30
    tolerance_days: int = 5
    chip_size: int = 256
    bands: tuple[str, ...] = HLS_LIKE.default_bands
    mask_band: str = HLS_LIKE.mask_band
    cloud_threshold: float = 50.0
    daytime_only: bool = False
    num_classes: int = 2
    profile_id: str = "hls"

    def __post_init__(self):
        if self.timesteps < 1:
            raise DataError("timesteps must be >= 1")
        if self.step_days < 1 or self.tolerance_days < 0:
            raise DataError("step_days must be >= 1 and tolerance_days >= 0")
        if not 64 <= self.chip_size <= 1024:
            raise DataError(f"chip_size must be in 64..1024, got {self.chip_size}")
        if not self.bands:
            raise DataError("bands must be non-empty")
        if self.num_classes < 1 or self.num_classes >= IGNORE_LABEL:
            raise DataError(f"num_classes out of range: {self.num_classes}")
        if self.profile_id not in PROFILES:
            raise DataError(f"unknown product profile {self.profile_id!r}")

    @property
    def profile(self) -> ProductProfile:
        return PROFILES[self.profile_id]


@dataclass(frozen=True)
class GranuleSet:
    """One granule per timestep, chronological oldest first, single tile."""

    granules: tuple[GranuleRef, ...]

    def __post_init__(self):
        if not self.granules:
            raise DataError("empty granule set")
        tiles = {g.tile_id for g in self.granules}
        if len(tiles) != 1:
            raise DataError(f"granule set spans tiles {sorted(tiles)}")
        times = [g.acquired_at for g in self.granules]
        if times != sorted(times):
            raise DataError("granule set must be ordered oldest first")

    def __len__(self):
        return len(self.granules)

    @property
    def tile_id(self) -> str:
        return self.granules[0].tile_id

    def key(self) -> tuple[str, ...]:
        return tuple(g.granule_id for g in self.granules)


@dataclass
class ChipTensor:
    """T x C x H x W pixel stack with per-pixel validity and georeferencing."""

    values: np.ndarray  # int16
    valid: np.ndarray  # bool, same shape
    geotransform: GeoTransform
    crs: CrsId

    def __post_init__(self):
        if self.values.ndim != 4:
            raise DataError(f"chip must be 4-D, got shape {self.values.shape}")
        if self.valid.shape != self.values.shape:
            raise DataError("valid mask shape differs from values")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape


@dataclass
class SegmentationMap:
    """H x W class raster; IGNORE_LABEL marks unlabeled pixels."""

    labels: np.ndarray  # uint8

    def __post_init__(self):
        if self.labels.ndim != 2 or self.labels.dtype != np.uint8:
            raise DataError("segmentation map must be a 2-D uint8 array")

    def scored_mask(self) -> np.ndarray:
        return self.labels != IGNORE_LABEL


@dataclass(frozen=True)
class ManifestEntry:
    chip_path: str
    label_path: str
    tile_id: str
    chip_ix: int
    chip_iy: int
    granule_ids: tuple[str, ...] = field(default=())
    observation_count: int = 0

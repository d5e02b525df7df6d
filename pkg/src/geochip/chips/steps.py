"""The per-observation pipeline steps: filter, assign, group, window, label, mask, QC.

All pure functions; the orchestration (I/O, parallelism, reporting) lives in
pipeline.py.
"""

from __future__ import annotations

import logging
from datetime import date as Date
from datetime import timedelta

import numpy as np

from geochip.catalog import GranuleRef
from geochip.geo import CrsId, GeoTransform, PixelWindow, transform_points
from geochip.raster import RasterMeta
from geochip.chips.types import (
    IGNORE_LABEL,
    ChipSpec,
    ChipTensor,
    GranuleSet,
    Observation,
    SegmentationMap,
)

log = logging.getLogger(__name__)


def filter_granules(granules: list[GranuleRef], spec: ChipSpec,
                    point: tuple[float, float] | None = None) -> list[GranuleRef]:
    """Cloud threshold, coverage at the observation point, optional daytime.

    Granules missing any configured band (or the mask band) are dropped here
    rather than failing mid-download. Order is preserved.
    """
    needed = tuple(spec.bands) + (spec.mask_band,)
    daytime_key = spec.profile.daytime_property
    out = []
    for g in granules:
        if g.cloud_cover > spec.cloud_threshold:
            continue
        if point is not None and not g.footprint.contains(point[0], point[1]):
            continue
        if spec.daytime_only and not g.properties.get(daytime_key, True):
            continue
        if not g.has_bands(needed):
            continue
        out.append(g)
    return out


def _delta_days(acquired_at, target: Date) -> int:
    """Calendar-day distance; acquisition time of day does not count."""
    return abs((acquired_at.date() - target).days)


def assign_timesteps(obs: Observation, candidates: list[GranuleRef],
                     spec: ChipSpec) -> GranuleSet | None:
    """Pick one granule per timestep looking back from the observation date.

    Timestep t targets obs.date - t*step_days; the closest candidate within
    tolerance wins, ties going to the earlier acquisition. All timesteps must
    come from one tile; tiles are tried in sorted order and the first with a
    complete assignment wins. Returns None when any step has no candidate.
    """
    by_tile: dict[str, list[GranuleRef]] = {}
    for g in candidates:
        by_tile.setdefault(g.tile_id, []).append(g)

    for tile_id in sorted(by_tile):
        pool = by_tile[tile_id]
        chosen: list[GranuleRef] = []
        for t in range(spec.timesteps):
            target = obs.date - timedelta(days=t * spec.step_days)
            best = None
            for g in pool:
                delta = _delta_days(g.acquired_at, target)
                if delta > spec.tolerance_days:
                    continue
                rank = (delta, g.acquired_at, g.granule_id)
                if best is None or rank < best[0]:
                    best = (rank, g)
            if best is None:
                chosen = []
                break
            chosen.append(best[1])
        if chosen:
            chosen.reverse()  # oldest first
            return GranuleSet(tuple(chosen))
    return None


def group_observations(
    assignments: list[tuple[Observation, GranuleSet]],
) -> dict[tuple[str, ...], list[Observation]]:
    """Partition observations by their exact granule-id tuple.

    Keys iterate in sorted order; observations keep their input order inside
    each group (first-writer-wins label rasterization depends on it).
    """
    groups: dict[tuple[str, ...], list[Observation]] = {}
    for obs, gset in assignments:
        groups.setdefault(gset.key(), []).append(obs)
    return {key: groups[key] for key in sorted(groups)}


def chip_window_for_point(obs: Observation, tile_meta: RasterMeta,
                          chip_size: int) -> tuple[int, int, PixelWindow] | None:
    """Grid cell and window containing the observation, on the tile-anchored grid.

    Returns None when the point projects outside the tile or its cell would
    overrun the tile edge (partial edge chips are dropped).
    """
    x, y = transform_points(obs.lon, obs.lat, CrsId.wgs84(), tile_meta.crs)
    col, row = tile_meta.geotransform.world_to_pixel(float(x), float(y))
    if not (0 <= col < tile_meta.width and 0 <= row < tile_meta.height):
        return None
    chip_ix = col // chip_size
    chip_iy = row // chip_size
    window = PixelWindow(chip_ix * chip_size, chip_iy * chip_size, chip_size, chip_size)
    if not window.fits_inside(tile_meta.width, tile_meta.height):
        return None
    return chip_ix, chip_iy, window


def rasterize_labels(obs_in_chip: list[Observation], window: PixelWindow,
                     gt: GeoTransform, crs: CrsId) -> tuple[SegmentationMap, int]:
    """Burn point labels into an ignore-initialized map; first writer wins.

    gt is the tile-level geotransform (window offsets are subtracted here).
    Returns the map plus the number of conflicting writes that were dropped.
    """
    labels = np.full((window.height, window.width), IGNORE_LABEL, dtype=np.uint8)
    conflicts = 0
    for obs in obs_in_chip:
        x, y = transform_points(obs.lon, obs.lat, CrsId.wgs84(), crs)
        col, row = gt.world_to_pixel(float(x), float(y))
        local_c = col - window.col_off
        local_r = row - window.row_off
        if not (0 <= local_c < window.width and 0 <= local_r < window.height):
            raise ValueError(f"observation {obs} falls outside the chip window")
        if labels[local_r, local_c] != IGNORE_LABEL:
            conflicts += 1
            log.warning("label conflict at pixel (%d,%d): keeping %d, dropping %d",
                        local_c, local_r, labels[local_r, local_c], obs.label)
            continue
        labels[local_r, local_c] = obs.label
    return SegmentationMap(labels), conflicts


def apply_cloud_mask(chip: ChipTensor, masks: np.ndarray, spec: ChipSpec) -> ChipTensor:
    """Invalidate pixels whose mask has any configured bad bit, per timestep.

    masks: T x H x W uint8 bitfields. Affected pixels become nodata across
    all bands of that timestep, in place.
    """
    t_steps, _bands, h, w = chip.shape
    if masks.shape != (t_steps, h, w):
        raise ValueError(f"mask shape {masks.shape} != expected {(t_steps, h, w)}")
    bad_bits = spec.profile.bad_bits_value()
    nodata = spec.profile.nodata
    for t in range(t_steps):
        bad = (masks[t] & bad_bits) != 0
        chip.values[t, :, bad] = nodata
        chip.valid[t, :, bad] = False
    return chip


def qc_validate(chip: ChipTensor, seg: SegmentationMap) -> bool:
    """True iff every labeled pixel has valid data at all timesteps and bands.

    A map with no labeled pixels fails: such a pair trains nothing and is
    dropped.
    """
    scored = seg.scored_mask()
    if not scored.any():
        return False
    return bool(chip.valid[:, :, scored].all())

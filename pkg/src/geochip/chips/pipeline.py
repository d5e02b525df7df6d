"""End-to-end chip creation: observations CSV in, GeoTIFF pairs + manifest out.

Groups are independent work units run on a bounded thread pool; results are
reduced in sorted-key order so the manifest and report are identical no
matter how many workers ran.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from geochip.catalog import Catalog, CatalogSource, GranuleRef, SearchQuery
from geochip.errors import DataError
from geochip.geo import GeoBBox, PixelWindow
from geochip.raster import open_raster, read_window
from geochip.chips.extract import (
    AssetReader,
    extract_chip,
    read_mask_stack,
    tile_grid_meta,
    write_chip_pair,
)
from geochip.chips.observations import load_observations
from geochip.chips.steps import (
    apply_cloud_mask,
    assign_timesteps,
    chip_window_for_point,
    filter_granules,
    group_observations,
    qc_validate,
    rasterize_labels,
)
from geochip.chips.types import (
    IGNORE_LABEL,
    ChipSpec,
    GranuleSet,
    ManifestEntry,
    Observation,
    SegmentationMap,
)

log = logging.getLogger(__name__)

# search-cache grid: nearby points share one catalog query
_QUERY_GRID_DEG = 0.1


@dataclass
class PipelineReport:
    observations_in: int = 0
    assignment_failures: int = 0
    assigned: int = 0
    groups: int = 0
    chip_cells: int = 0
    qc_rejections: int = 0
    extract_failures: int = 0
    label_conflicts: int = 0
    chips_out: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "observations_in": self.observations_in,
            "assignment_failures": self.assignment_failures,
            "assigned": self.assigned,
            "groups": self.groups,
            "chip_cells": self.chip_cells,
            "qc_rejections": self.qc_rejections,
            "extract_failures": self.extract_failures,
            "label_conflicts": self.label_conflicts,
            "chips_out": self.chips_out,
            "errors": list(self.errors),
        }


def run_pipeline(obs_csv, spec: ChipSpec, catalog_src: CatalogSource, out_dir,
                 jobs: int = 4) -> PipelineReport:
    """Execute the six steps and write chips/, labels/, manifest.csv, report.json."""
    out = Path(out_dir)
    (out / "chips").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    observations = load_observations(obs_csv)
    for obs in observations:
        if obs.label >= spec.num_classes:
            raise DataError(f"label {obs.label} out of range for {spec.num_classes} classes")

    report = PipelineReport(observations_in=len(observations))
    catalog = Catalog.open(catalog_src)
    try:
        assignments = _assign_all(observations, spec, catalog, report)
        groups = group_observations(assignments)
        sets_by_key = {gset.key(): gset for _obs, gset in assignments}
        report.groups = len(groups)

        results = _process_groups(groups, sets_by_key, spec, out, report, jobs)
    finally:
        catalog.close()

    entries = sorted(results, key=lambda e: e.chip_path)
    _write_manifest(out / "manifest.csv", entries)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def _assign_all(observations, spec, catalog, report):
    cache: dict = {}
    assignments: list[tuple[Observation, GranuleSet]] = []
    for obs in observations:
        candidates = _candidates_for(obs, spec, catalog, cache)
        kept = filter_granules(candidates, spec, point=(obs.lon, obs.lat))
        gset = assign_timesteps(obs, kept, spec)
        if gset is None:
            report.assignment_failures += 1
            continue
        report.assigned += 1
        assignments.append((obs, gset))
    return assignments


def _candidates_for(obs: Observation, spec: ChipSpec, catalog: Catalog,
                    cache: dict) -> list[GranuleRef]:
    start_date = obs.date - timedelta(days=(spec.timesteps - 1) * spec.step_days
                                      + spec.tolerance_days)
    end_date = obs.date + timedelta(days=spec.tolerance_days)
    cell_x = int(np.floor(obs.lon / _QUERY_GRID_DEG))
    cell_y = int(np.floor(obs.lat / _QUERY_GRID_DEG))
    key = (cell_x, cell_y, start_date, end_date)
    if key in cache:
        return cache[key]
    bbox = GeoBBox(
        max(-180.0, cell_x * _QUERY_GRID_DEG - _QUERY_GRID_DEG),
        max(-90.0, cell_y * _QUERY_GRID_DEG - _QUERY_GRID_DEG),
        min(180.0, (cell_x + 2) * _QUERY_GRID_DEG),
        min(90.0, (cell_y + 2) * _QUERY_GRID_DEG),
    )
    q = SearchQuery(
        collection=_collection_for(catalog, spec),
        bbox=bbox,
        datetime_start=datetime.combine(start_date, time.min, tzinfo=timezone.utc),
        datetime_end=datetime.combine(end_date, time.max, tzinfo=timezone.utc),
    )
    result = catalog.search(q)
    cache[key] = result
    return result


def _collection_for(catalog, spec) -> str:
    # fixture catalogs carry a single collection; remote ones use the profile id
    from geochip.catalog.client import LocalCatalog
    if isinstance(catalog, LocalCatalog):
        coll_dir = catalog.root / "collections"
        names = sorted(p.name for p in coll_dir.iterdir() if p.is_dir()) if coll_dir.is_dir() else []
        if len(names) == 1:
            return names[0]
    return spec.profile_id


def _process_groups(groups, sets_by_key, spec, out, report, jobs):
    def work(key):
        gset = sets_by_key[key]
        obs_list = groups[key]
        return _process_one_group(gset, obs_list, spec, out)

    results: list[ManifestEntry] = []
    keys = list(groups)
    if jobs <= 1:
        outcomes = [work(k) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, keys))
    for key, outcome in zip(keys, outcomes):
        entries, cells, qc_drops, conflicts, error = outcome
        report.chip_cells += cells
        report.qc_rejections += qc_drops
        report.label_conflicts += conflicts
        if error is not None:
            report.extract_failures += cells - len(entries) - qc_drops
            report.errors.append(f"group {key[0]}..: {error}")
        report.chips_out += len(entries)
        results.extend(entries)
    return results


def _process_one_group(gset: GranuleSet, obs_list, spec: ChipSpec, out: Path):
    """Returns (entries, chip_cells, qc_rejections, label_conflicts, error)."""
    entries: list[ManifestEntry] = []
    qc_drops = 0
    conflicts_total = 0
    cells: dict[tuple[int, int], tuple[PixelWindow, list[Observation]]] = {}
    digest = hashlib.sha1("|".join(gset.key()).encode()).hexdigest()[:8]
    try:
        with AssetReader() as reader:
            tile_meta = tile_grid_meta(gset, spec, reader)
            for obs in obs_list:
                placed = chip_window_for_point(obs, tile_meta, spec.chip_size)
                if placed is None:
                    continue
                ix, iy, window = placed
                cells.setdefault((ix, iy), (window, []))[1].append(obs)

            for (ix, iy) in sorted(cells):
                window, members = cells[(ix, iy)]
                chip = extract_chip(gset, window, spec, reader)
                seg, conflicts = rasterize_labels(
                    members, window, tile_meta.geotransform, tile_meta.crs)
                conflicts_total += conflicts
                masks = read_mask_stack(gset, window, spec, reader)
                chip = apply_cloud_mask(chip, masks, spec)
                if not qc_validate(chip, seg):
                    qc_drops += 1
                    continue
                stem = f"{gset.tile_id}_{ix:03d}_{iy:03d}_{digest}"
                chip_rel = f"chips/chip_{stem}.tif"
                label_rel = f"labels/label_{stem}.tif"
                write_chip_pair(chip, seg, spec, out / chip_rel, out / label_rel)
                entries.append(ManifestEntry(
                    chip_path=chip_rel, label_path=label_rel, tile_id=gset.tile_id,
                    chip_ix=ix, chip_iy=iy, granule_ids=gset.key(),
                    observation_count=len(members)))
            return entries, len(cells), qc_drops, conflicts_total, None
    except (DataError, OSError) as exc:
        log.warning("group %s failed: %s", gset.key(), exc)
        return entries, len(cells), qc_drops, conflicts_total, str(exc)


def _write_manifest(path: Path, entries: list[ManifestEntry]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["chip", "label"])
        for e in entries:
            writer.writerow([e.chip_path, e.label_path])


def run_polygon_pipeline(label_raster, date, spec: ChipSpec,
                         catalog_src: CatalogSource, out_dir,
                         jobs: int = 4) -> PipelineReport:
    """Polygon-label mode: windows a label GeoTIFF and imagery identically.

    The label raster must already be on the imagery grid (same CRS, same
    pixel size, origin aligned to whole pixels); reprojection is out of scope
    and raises.
    """
    out = Path(out_dir)
    (out / "chips").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    report = PipelineReport()
    catalog = Catalog.open(catalog_src)
    try:
        with open_raster(label_raster) as label_handle:
            label_meta = label_handle.meta
            # one synthetic observation at the label raster's center drives
            # granule search and timestep assignment
            from geochip.geo import transform_points, CrsId
            cx, cy = label_meta.geotransform.pixel_to_world(
                label_meta.width // 2, label_meta.height // 2)
            lon, lat = transform_points(cx, cy, label_meta.crs, CrsId.wgs84())
            center = Observation(lon=float(lon), lat=float(lat), date=date, label=0)
            report.observations_in = 1

            candidates = _candidates_for(center, spec, catalog, {})
            kept = filter_granules(candidates, spec, point=(center.lon, center.lat))
            gset = assign_timesteps(center, kept, spec)
            if gset is None:
                report.assignment_failures = 1
                _write_manifest(out / "manifest.csv", [])
                (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
                return report
            report.assigned = 1
            report.groups = 1

            entries = _polygon_chips(gset, label_handle, spec, out, report)
    finally:
        catalog.close()

    entries.sort(key=lambda e: e.chip_path)
    _write_manifest(out / "manifest.csv", entries)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def _polygon_chips(gset, label_handle, spec, out, report):
    label_meta = label_handle.meta
    entries = []
    digest = hashlib.sha1("|".join(gset.key()).encode()).hexdigest()[:8]
    with AssetReader() as reader:
        tile_meta = tile_grid_meta(gset, spec, reader)
        if tile_meta.crs != label_meta.crs:
            raise DataError(
                f"label raster CRS {label_meta.crs.code} != imagery CRS "
                f"{tile_meta.crs.code}; reproject before running")
        tgt = tile_meta.geotransform
        lgt = label_meta.geotransform
        if (tgt.pixel_w, tgt.pixel_h) != (lgt.pixel_w, lgt.pixel_h):
            raise DataError("label raster pixel size differs from imagery")
        col_shift = (lgt.origin_x - tgt.origin_x) / tgt.pixel_w
        row_shift = (lgt.origin_y - tgt.origin_y) / tgt.pixel_h
        if abs(col_shift - round(col_shift)) > 1e-6 or abs(row_shift - round(row_shift)) > 1e-6:
            raise DataError("label raster grid is not aligned to the imagery grid")
        col_shift, row_shift = int(round(col_shift)), int(round(row_shift))

        size = spec.chip_size
        for iy in range(tile_meta.height // size):
            for ix in range(tile_meta.width // size):
                window = PixelWindow(ix * size, iy * size, size, size)
                # label window in label-raster pixel space
                lc = window.col_off - col_shift
                lr = window.row_off - row_shift
                if lc < 0 or lr < 0 or lc + size > label_meta.width \
                        or lr + size > label_meta.height:
                    continue
                label_buf = read_window(label_handle, 1, PixelWindow(lc, lr, size, size))
                labels = label_buf.values.astype(np.uint8)
                labels[~label_buf.valid_mask] = IGNORE_LABEL
                seg = SegmentationMap(labels)
                if not seg.scored_mask().any():
                    continue
                report.chip_cells += 1
                chip = extract_chip(gset, window, spec, reader)
                masks = read_mask_stack(gset, window, spec, reader)
                chip = apply_cloud_mask(chip, masks, spec)
                if not qc_validate(chip, seg):
                    report.qc_rejections += 1
                    continue
                stem = f"{gset.tile_id}_{ix:03d}_{iy:03d}_{digest}"
                chip_rel = f"chips/chip_{stem}.tif"
                label_rel = f"labels/label_{stem}.tif"
                write_chip_pair(chip, seg, spec, out / chip_rel, out / label_rel)
                report.chips_out += 1
                entries.append(ManifestEntry(
                    chip_path=chip_rel, label_path=label_rel, tile_id=gset.tile_id,
                    chip_ix=ix, chip_iy=iy, granule_ids=gset.key()))
    return entries

"""Observation-to-chip pipeline: search, filter, assign, group, extract, QC, write."""

from geochip.chips.types import (
    ChipSpec,
    ChipTensor,
    GranuleSet,
    ManifestEntry,
    Observation,
    ProductProfile,
    SegmentationMap,
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
from geochip.chips.extract import extract_chip, read_mask_stack, write_chip_pair, load_chip_pair
from geochip.chips.pipeline import PipelineReport, run_pipeline, run_polygon_pipeline

__all__ = [
    "ChipSpec",
    "ChipTensor",
    "GranuleSet",
    "ManifestEntry",
    "Observation",
    "ProductProfile",
    "SegmentationMap",
    "load_observations",
    "filter_granules",
    "assign_timesteps",
    "group_observations",
    "chip_window_for_point",
    "rasterize_labels",
    "apply_cloud_mask",
    "qc_validate",
    "extract_chip",
    "read_mask_stack",
    "write_chip_pair",
    "load_chip_pair",
    "PipelineReport",
    "run_pipeline",
    "run_polygon_pipeline",
]

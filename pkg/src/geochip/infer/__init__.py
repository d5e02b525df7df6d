"""AOI inference: unlabeled chips, model forward, georeferenced prediction mosaics."""

from geochip.infer.region import (
    PredictionMosaic,
    RegionChip,
    TileGrid,
    chips_for_region,
    load_region_chips,
    predict_region,
    run_inference,
    save_region_chips,
    write_prediction_cog,
)

__all__ = [
    "PredictionMosaic",
    "RegionChip",
    "TileGrid",
    "chips_for_region",
    "save_region_chips",
    "load_region_chips",
    "predict_region",
    "write_prediction_cog",
    "run_inference",
]

"""geochip: from geolocated observations to served segmentation maps.

Subpackages:
    geo      - coordinate transforms, tiling math, bounding boxes
    raster   - GeoTIFF windowed reader/writer and COG conversion
    catalog  - STAC item search (HTTP + local fixture catalogs)
    chips    - observation -> chip/label pipeline
    model    - tensor engine, transformer segmentation model, distillation
    infer    - AOI inference and prediction mosaics
    service  - REST task service with tile rendering
"""

__version__ = "0.1.0"

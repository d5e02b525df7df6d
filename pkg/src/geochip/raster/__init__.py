"""GeoTIFF I/O: windowed reads, writes, and COG conversion.

Self-contained little-endian TIFF 6.0 codec covering the subset this pipeline
needs: uint8/int16/uint16/float32 samples, none/DEFLATE compression, strips or
256/512 tiles, planar band layout, GeoTIFF georeferencing keys, GDAL-style
nodata and metadata tags, and reduced-resolution overview IFDs laid out
header-first for ranged reads.
"""

from geochip.raster.meta import BandBuffer, RasterMeta
from geochip.raster.sources import ByteSource, CountingSource, FileSource, HttpSource
from geochip.raster.reader import RasterHandle, open_raster, open_raster_source, read_window
from geochip.raster.writer import write_geotiff
from geochip.raster.cog import convert_to_cog

__all__ = [
    "BandBuffer",
    "RasterMeta",
    "ByteSource",
    "CountingSource",
    "FileSource",
    "HttpSource",
    "RasterHandle",
    "open_raster",
    "open_raster_source",
    "read_window",
    "write_geotiff",
    "convert_to_cog",
]

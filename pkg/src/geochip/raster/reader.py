"""Windowed GeoTIFF reading.

open_raster parses the header and all IFDs without touching pixel payload;
read_window decodes only the strips/tiles overlapping the requested window,
which is what makes remote COG access cheap.
"""

from __future__ import annotations

import struct
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass

import numpy as np

from geochip.errors import DataError
from geochip.geo import CrsId, GeoTransform, PixelWindow
from geochip.raster import tifftags as T
from geochip.raster.meta import DTYPES, BandBuffer, RasterMeta
from geochip.raster.sources import ByteSource, FileSource, HttpSource

_HEADER_MAGIC = b"II*\x00"


@dataclass
class _Ifd:
    width: int
    height: int
    bits: int
    sample_format: int
    samples: int
    compression: int
    planar: int
    tiled: bool
    block_w: int
    block_h: int
    offsets: np.ndarray
    byte_counts: np.ndarray
    reduced: bool
    raw_tags: dict


class RasterHandle:
    """Parsed TIFF structure plus the byte source; immutable and shareable."""

    def __init__(self, source: ByteSource, meta: RasterMeta, ifds: list[_Ifd]):
        self.source = source
        self.meta = meta
        self.ifds = ifds

    @property
    def overview_count(self) -> int:
        return len(self.ifds) - 1

    def level_shape(self, level: int) -> tuple[int, int]:
        """(width, height) of the given IFD level (0 = full resolution)."""
        ifd = self.ifds[level]
        return ifd.width, ifd.height

    def close(self):
        self.source.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_raster(uri) -> RasterHandle:
    """Open a local path or http(s) URL as a GeoTIFF without reading pixels."""
    uri = str(uri)
    if uri.startswith("http://") or uri.startswith("https://"):
        return open_raster_source(HttpSource(uri))
    return open_raster_source(FileSource(uri))


def open_raster_source(source: ByteSource) -> RasterHandle:
    """Parse structure only: header, IFD tables, out-of-line tag values.

    Reads are exact, so opening never touches pixel payload. Files written by
    this package are laid out header-first, keeping the structural reads in
    one small region of the file.
    """
    head = source.read(0, 8)
    if len(head) < 8 or head[:4] != _HEADER_MAGIC:
        source.close()
        raise DataError(f"{source.name}: not a TIFF (bad magic)")
    (ifd_offset,) = struct.unpack("<I", head[4:8])

    ifds = []
    first_tags = None
    while ifd_offset:
        tags, next_off = _parse_ifd(source, ifd_offset)
        if first_tags is None:
            first_tags = tags
        ifd = _build_ifd(source.name, tags)
        ifds.append(ifd)
        ifd_offset = next_off
        if len(ifds) > 32:
            raise DataError(f"{source.name}: too many IFDs")
    if not ifds:
        source.close()
        raise DataError(f"{source.name}: no IFD")

    # overview IFDs must follow the full-resolution one
    main = ifds[0]
    meta = _build_meta(source.name, main, first_tags)
    return RasterHandle(source, meta, ifds)


def read_window(handle: RasterHandle, band: int, window: PixelWindow,
                level: int = 0) -> BandBuffer:
    """Decode one 1-based band over a window, touching only overlapping blocks."""
    if level < 0 or level >= len(handle.ifds):
        raise DataError(f"overview level {level} out of range")
    ifd = handle.ifds[level]
    if band < 1 or band > ifd.samples:
        raise DataError(f"band {band} out of range 1..{ifd.samples}")
    if not window.fits_inside(ifd.width, ifd.height):
        raise DataError(
            f"window {window} outside raster {ifd.width}x{ifd.height} at level {level}")

    np_dtype = _np_dtype_for(ifd)
    out = np.zeros(window.shape(), dtype=np_dtype)

    blocks_across = _ceil_div(ifd.width, ifd.block_w)
    blocks_down = _ceil_div(ifd.height, ifd.block_h)
    blocks_per_plane = blocks_across * blocks_down
    plane = band - 1 if ifd.planar == 2 else 0

    bx0 = window.col_off // ifd.block_w
    bx1 = (window.col_end - 1) // ifd.block_w
    by0 = window.row_off // ifd.block_h
    by1 = (window.row_end - 1) // ifd.block_h

    for by in range(by0, by1 + 1):
        for bx in range(bx0, bx1 + 1):
            idx = plane * blocks_per_plane + by * blocks_across + bx
            block = _decode_block(handle, ifd, idx, band)
            # intersection of the block with the window, in image coords
            ix0 = max(window.col_off, bx * ifd.block_w)
            ix1 = min(window.col_end, bx * ifd.block_w + ifd.block_w, ifd.width)
            iy0 = max(window.row_off, by * ifd.block_h)
            iy1 = min(window.row_end, by * ifd.block_h + ifd.block_h, ifd.height)
            out[iy0 - window.row_off:iy1 - window.row_off,
                ix0 - window.col_off:ix1 - window.col_off] = \
                block[iy0 - by * ifd.block_h:iy1 - by * ifd.block_h,
                      ix0 - bx * ifd.block_w:ix1 - bx * ifd.block_w]

    nodata = handle.meta.nodata
    if nodata is None:
        valid = np.ones(out.shape, dtype=bool)
    else:
        valid = out != np_dtype.type(nodata)
    return BandBuffer(window=window, values=out, valid_mask=valid)


def read_full(handle: RasterHandle, band: int, level: int = 0) -> BandBuffer:
    w, h = handle.level_shape(level)
    return read_window(handle, band, PixelWindow(0, 0, w, h), level=level)


# ---------------------------------------------------------------- internals

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _np_dtype_for(ifd: _Ifd) -> np.dtype:
    for name, (np_dtype, bits, fmt) in DTYPES.items():
        if bits == ifd.bits and fmt == ifd.sample_format:
            return np_dtype
    raise DataError(
        f"unsupported sample type: {ifd.bits} bits, format {ifd.sample_format}")


def _decode_block(handle: RasterHandle, ifd: _Ifd, idx: int, band: int) -> np.ndarray:
    offset = int(ifd.offsets[idx])
    count = int(ifd.byte_counts[idx])
    raw = handle.source.read(offset, count)
    if len(raw) != count:
        raise DataError(f"{handle.source.name}: truncated block read")
    if ifd.compression == T.COMPRESSION_DEFLATE:
        try:
            raw = zlib.decompress(raw)
        except zlib.error as exc:
            raise DataError(f"{handle.source.name}: deflate decode failed: {exc}") from exc

    np_dtype = _np_dtype_for(ifd)
    if ifd.planar == 1 and ifd.samples > 1:
        # chunky: samples interleaved per pixel
        arr = np.frombuffer(raw, dtype=np_dtype)
        arr = arr.reshape(ifd.block_h, ifd.block_w, ifd.samples)[:, :, band - 1]
    else:
        expected = ifd.block_h * ifd.block_w
        arr = np.frombuffer(raw, dtype=np_dtype, count=expected)
        arr = arr.reshape(ifd.block_h, ifd.block_w)
    return arr


def _parse_ifd(reader: ByteSource, offset: int):
    (n_entries,) = struct.unpack("<H", reader.read(offset, 2))
    entry_bytes = reader.read(offset + 2, 12 * n_entries)
    tags = {}
    for i in range(n_entries):
        tag, ftype, count = struct.unpack_from("<HHI", entry_bytes, i * 12)
        value_bytes = entry_bytes[i * 12 + 8:i * 12 + 12]
        size = T.TYPE_SIZES.get(ftype, 0) * count
        if size == 0:
            continue  # unknown field type; skip
        if size > 4:
            (value_off,) = struct.unpack("<I", value_bytes)
            data = reader.read(value_off, size)
        else:
            data = value_bytes[:size]
        tags[tag] = _decode_values(ftype, count, data)
    (next_off,) = struct.unpack("<I", reader.read(offset + 2 + 12 * n_entries, 4))
    return tags, next_off


def _decode_values(ftype: int, count: int, data: bytes):
    if ftype == T.TYPE_ASCII:
        return data.rstrip(b"\x00").decode("utf-8", errors="replace")
    fmt = {T.TYPE_BYTE: "B", T.TYPE_SHORT: "H", T.TYPE_LONG: "I",
           T.TYPE_SBYTE: "b", T.TYPE_SSHORT: "h", T.TYPE_SLONG: "i",
           T.TYPE_DOUBLE: "d", T.TYPE_RATIONAL: "II"}.get(ftype)
    if fmt is None:
        return data
    if ftype == T.TYPE_RATIONAL:
        vals = struct.unpack(f"<{2 * count}I", data)
        return tuple(vals[i] / vals[i + 1] if vals[i + 1] else 0.0
                     for i in range(0, 2 * count, 2))
    return struct.unpack(f"<{count}{fmt}", data)


def _tag_scalar(tags: dict, tag: int, default=None):
    v = tags.get(tag)
    if v is None:
        return default
    if isinstance(v, tuple):
        return v[0]
    return v


def _build_ifd(name: str, tags: dict) -> _Ifd:
    width = _tag_scalar(tags, T.IMAGE_WIDTH)
    height = _tag_scalar(tags, T.IMAGE_LENGTH)
    if width is None or height is None:
        raise DataError(f"{name}: missing image dimensions")
    samples = int(_tag_scalar(tags, T.SAMPLES_PER_PIXEL, 1))
    bits_tuple = tags.get(T.BITS_PER_SAMPLE, (8,))
    bits = int(bits_tuple[0]) if isinstance(bits_tuple, tuple) else int(bits_tuple)
    sample_format = int(_tag_scalar(tags, T.SAMPLE_FORMAT, 1))
    compression = int(_tag_scalar(tags, T.COMPRESSION, T.COMPRESSION_NONE))
    if compression not in (T.COMPRESSION_NONE, T.COMPRESSION_DEFLATE):
        raise DataError(f"{name}: unsupported compression code {compression}")
    predictor = int(_tag_scalar(tags, T.PREDICTOR, 1))
    if predictor != 1:
        raise DataError(f"{name}: unsupported predictor {predictor}")
    planar = int(_tag_scalar(tags, T.PLANAR_CONFIG, 1))

    if T.TILE_OFFSETS in tags:
        tiled = True
        block_w = int(_tag_scalar(tags, T.TILE_WIDTH))
        block_h = int(_tag_scalar(tags, T.TILE_LENGTH))
        offsets = np.asarray(tags[T.TILE_OFFSETS], dtype=np.uint64)
        byte_counts = np.asarray(tags[T.TILE_BYTE_COUNTS], dtype=np.uint64)
    elif T.STRIP_OFFSETS in tags:
        tiled = False
        block_w = int(width)
        block_h = int(_tag_scalar(tags, T.ROWS_PER_STRIP, height))
        offsets = np.asarray(tags[T.STRIP_OFFSETS], dtype=np.uint64)
        byte_counts = np.asarray(tags[T.STRIP_BYTE_COUNTS], dtype=np.uint64)
    else:
        raise DataError(f"{name}: no strip or tile offsets")

    reduced = bool(int(_tag_scalar(tags, T.NEW_SUBFILE_TYPE, 0)) & 1)
    return _Ifd(width=int(width), height=int(height), bits=bits,
                sample_format=sample_format, samples=samples,
                compression=compression, planar=planar, tiled=tiled,
                block_w=block_w, block_h=block_h, offsets=offsets,
                byte_counts=byte_counts, reduced=reduced, raw_tags=tags)


def _build_meta(name: str, ifd: _Ifd, tags: dict) -> RasterMeta:
    scale = tags.get(T.MODEL_PIXEL_SCALE)
    tiepoint = tags.get(T.MODEL_TIEPOINT)
    if scale is None or tiepoint is None:
        raise DataError(f"{name}: missing georeferencing (pixel scale / tiepoint)")
    # tiepoint maps raster (i,j,k) -> world (x,y,z); we require the origin form
    i, j, _k, x, y, _z = tiepoint[:6]
    origin_x = x - i * scale[0]
    origin_y = y + j * scale[1]
    gt = GeoTransform(origin_x, float(scale[0]), origin_y, -float(scale[1]))

    crs = _parse_geokeys(name, tags)

    nodata = None
    nodata_str = tags.get(T.GDAL_NODATA)
    if nodata_str is not None:
        try:
            nodata = float(str(nodata_str).strip())
        except ValueError:
            raise DataError(f"{name}: malformed nodata tag {nodata_str!r}")

    custom = _parse_gdal_metadata(tags.get(T.GDAL_METADATA))

    dtype = None
    for dname, (np_dtype, bits, fmt) in DTYPES.items():
        if bits == ifd.bits and fmt == ifd.sample_format:
            dtype = dname
    if dtype is None:
        raise DataError(f"{name}: unsupported sample type")

    return RasterMeta(
        width=ifd.width, height=ifd.height, band_count=ifd.samples, dtype=dtype,
        geotransform=gt, crs=crs, nodata=nodata, tiled=ifd.tiled,
        block_size=ifd.block_w if ifd.tiled else None,
        compression="deflate" if ifd.compression == T.COMPRESSION_DEFLATE else "none",
        tags=custom)


def _parse_geokeys(name: str, tags: dict) -> CrsId:
    directory = tags.get(T.GEO_KEY_DIRECTORY)
    if directory is None:
        raise DataError(f"{name}: missing GeoKey directory")
    n_keys = directory[3]
    model_type = None
    code = None
    for k in range(n_keys):
        key_id, location, count, value = directory[4 + 4 * k:8 + 4 * k]
        if key_id == T.GT_MODEL_TYPE:
            model_type = value
        elif key_id == T.GEOGRAPHIC_TYPE and location == 0:
            if model_type != T.MODEL_TYPE_PROJECTED:
                code = value
        elif key_id == T.PROJECTED_CS_TYPE and location == 0:
            code = value
    if code is None:
        raise DataError(f"{name}: GeoKeys carry no CRS code")
    return CrsId(int(code))


def _parse_gdal_metadata(xml_text) -> dict[str, str]:
    if not xml_text:
        return {}
    try:
        root = ET.fromstring(str(xml_text))
    except ET.ParseError:
        return {}
    out = {}
    for item in root.findall("Item"):
        key = item.get("name")
        if key is not None:
            out[key] = item.text or ""
    return out

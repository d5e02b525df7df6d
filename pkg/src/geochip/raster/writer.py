"""GeoTIFF writing.

Single code path for plain rasters and multi-IFD COGs: all IFDs (plus their
out-of-line tag values) are laid out at the head of the file, pixel blocks
after them, so a remote reader gets the whole structure in one ranged read.
Output bytes are a pure function of the inputs (fixed deflate level, sorted
tags), which the fixture-determinism tests rely on.
"""

from __future__ import annotations

import struct
import xml.sax.saxutils
import zlib

import numpy as np

from geochip.errors import DataError
from geochip.geo import CrsId, GeoTransform
from geochip.raster import tifftags as T
from geochip.raster.meta import DTYPES, RasterMeta

_DEFLATE_LEVEL = 6


class TiffPage:
    """One IFD's worth of pixels: full resolution or a reduced overview."""

    def __init__(self, arrays: list[np.ndarray], tiled: bool, block_size: int | None,
                 reduced: bool = False):
        self.arrays = arrays
        self.height, self.width = arrays[0].shape
        self.tiled = tiled
        self.block_size = block_size
        self.reduced = reduced
        for a in arrays:
            if a.shape != (self.height, self.width):
                raise DataError("pages require equally shaped bands")


def write_geotiff(path, bands: list[np.ndarray], meta: RasterMeta):
    """Write bands (list of 2-D arrays, len == meta.band_count) as a GeoTIFF."""
    if len(bands) != meta.band_count:
        raise DataError(f"got {len(bands)} bands, meta declares {meta.band_count}")
    want = meta.np_dtype
    norm = []
    for i, b in enumerate(bands):
        arr = np.asarray(b)
        if arr.ndim != 2:
            raise DataError(f"band {i + 1} is not 2-D")
        if arr.shape != (meta.height, meta.width):
            raise DataError(
                f"band {i + 1} shape {arr.shape} != raster {meta.height}x{meta.width}")
        if arr.dtype != want:
            if not np.can_cast(arr.dtype, want, casting="same_kind"):
                raise DataError(f"band {i + 1} dtype {arr.dtype} incompatible with {meta.dtype}")
            arr = arr.astype(want)
        norm.append(np.ascontiguousarray(arr))
    page = TiffPage(norm, tiled=meta.tiled, block_size=meta.block_size)
    write_tiff_pages(path, [page], meta)


def write_tiff_pages(path, pages: list[TiffPage], meta: RasterMeta):
    """Serialize one full-resolution page plus optional overview pages."""
    np_dtype, bits, sample_format = DTYPES[meta.dtype]
    spp = len(pages[0].arrays)
    compression = (T.COMPRESSION_DEFLATE if meta.compression == "deflate"
                   else T.COMPRESSION_NONE)

    # encode pixel blocks per page
    page_blocks: list[list[bytes]] = []
    page_layout = []
    for page in pages:
        blocks, layout = _encode_blocks(page, meta, compression)
        page_blocks.append(blocks)
        page_layout.append(layout)

    # build tag lists with placeholder block offsets to size the head region
    def build_entries(page_idx: int, block_offsets: list[int]) -> list[tuple]:
        page = pages[page_idx]
        layout = page_layout[page_idx]
        n_blocks = len(page_blocks[page_idx])
        counts = [len(b) for b in page_blocks[page_idx]]
        e = []
        if page.reduced:
            e.append((T.NEW_SUBFILE_TYPE, T.TYPE_LONG, [1]))
        e.append((T.IMAGE_WIDTH, T.TYPE_LONG, [page.width]))
        e.append((T.IMAGE_LENGTH, T.TYPE_LONG, [page.height]))
        e.append((T.BITS_PER_SAMPLE, T.TYPE_SHORT, [bits] * spp))
        e.append((T.COMPRESSION, T.TYPE_SHORT, [compression]))
        e.append((T.PHOTOMETRIC, T.TYPE_SHORT, [1]))
        if page.tiled:
            e.append((T.TILE_WIDTH, T.TYPE_SHORT, [layout["block_w"]]))
            e.append((T.TILE_LENGTH, T.TYPE_SHORT, [layout["block_h"]]))
            e.append((T.TILE_OFFSETS, T.TYPE_LONG, block_offsets or [0] * n_blocks))
            e.append((T.TILE_BYTE_COUNTS, T.TYPE_LONG, counts))
        else:
            e.append((T.STRIP_OFFSETS, T.TYPE_LONG, block_offsets or [0] * n_blocks))
            e.append((T.ROWS_PER_STRIP, T.TYPE_LONG, [layout["block_h"]]))
            e.append((T.STRIP_BYTE_COUNTS, T.TYPE_LONG, counts))
        e.append((T.SAMPLES_PER_PIXEL, T.TYPE_SHORT, [spp]))
        e.append((T.PLANAR_CONFIG, T.TYPE_SHORT, [2 if spp > 1 else 1]))
        e.append((T.SAMPLE_FORMAT, T.TYPE_SHORT, [sample_format] * spp))
        if page_idx == 0:
            gt = meta.geotransform
            e.append((T.MODEL_PIXEL_SCALE, T.TYPE_DOUBLE,
                      [gt.pixel_w, -gt.pixel_h, 0.0]))
            e.append((T.MODEL_TIEPOINT, T.TYPE_DOUBLE,
                      [0.0, 0.0, 0.0, gt.origin_x, gt.origin_y, 0.0]))
            e.append((T.GEO_KEY_DIRECTORY, T.TYPE_SHORT, _geokeys(meta.crs)))
            if meta.tags:
                e.append((T.GDAL_METADATA, T.TYPE_ASCII, _gdal_metadata_xml(meta.tags)))
        if meta.nodata is not None:
            e.append((T.GDAL_NODATA, T.TYPE_ASCII, _format_nodata(meta.nodata, np_dtype)))
        e.sort(key=lambda item: item[0])
        return e

    # size head region: header + IFD tables + out-of-line values
    provisional = [build_entries(i, []) for i in range(len(pages))]
    ifd_offsets = []
    pos = 8
    for entries in provisional:
        ifd_offsets.append(pos)
        pos += 2 + 12 * len(entries) + 4
    value_base = pos
    for entries in provisional:
        for _tag, ftype, values in entries:
            size = _value_size(ftype, values)
            if size > 4:
                pos += size + (size & 1)
    data_base = pos

    # assign block offsets
    block_offsets: list[list[int]] = []
    pos = data_base
    for blocks in page_blocks:
        offs = []
        for b in blocks:
            offs.append(pos)
            pos += len(b) + (len(b) & 1)
        block_offsets.append(offs)

    final_entries = [build_entries(i, block_offsets[i]) for i in range(len(pages))]

    # serialize
    out = bytearray()
    out += b"II*\x00" + struct.pack("<I", ifd_offsets[0])
    value_chunks = []
    value_pos = value_base
    for page_idx, entries in enumerate(final_entries):
        table = bytearray()
        table += struct.pack("<H", len(entries))
        for tag, ftype, values in entries:
            payload = _pack_values(ftype, values)
            count = len(values) if ftype != T.TYPE_ASCII else len(payload)
            if len(payload) > 4:
                table += struct.pack("<HHII", tag, ftype, count, value_pos)
                if len(payload) & 1:
                    payload += b"\x00"
                value_chunks.append(payload)
                value_pos += len(payload)
            else:
                table += struct.pack("<HHI", tag, ftype, count)
                table += payload.ljust(4, b"\x00")
        next_ifd = ifd_offsets[page_idx + 1] if page_idx + 1 < len(pages) else 0
        table += struct.pack("<I", next_ifd)
        out += table
    for chunk in value_chunks:
        out += chunk
    assert len(out) == data_base, f"layout mismatch: {len(out)} != {data_base}"
    for blocks in page_blocks:
        for b in blocks:
            out += b
            if len(b) & 1:
                out += b"\x00"

    tmp = str(path) + ".part"
    with open(tmp, "wb") as f:
        f.write(bytes(out))
    import os
    os.replace(tmp, str(path))


def _encode_blocks(page: TiffPage, meta: RasterMeta, compression: int):
    """Chop bands into plane-major blocks, pad edges, optionally deflate."""
    np_dtype = meta.np_dtype
    if page.tiled:
        bw = bh = page.block_size
        if bw not in (256, 512):
            raise DataError(f"tiled pages need block_size 256/512, got {bw}")
    else:
        bw, bh = page.width, page.height  # single strip per plane

    pad_value = np_dtype.type(meta.nodata) if meta.nodata is not None else np_dtype.type(0)
    blocks = []
    for arr in page.arrays:
        for y0 in range(0, page.height, bh):
            for x0 in range(0, page.width, bw):
                tile = arr[y0:y0 + bh, x0:x0 + bw]
                if tile.shape != (bh, bw):
                    full = np.full((bh, bw), pad_value, dtype=np_dtype)
                    full[:tile.shape[0], :tile.shape[1]] = tile
                    tile = full
                raw = np.ascontiguousarray(tile, dtype=np_dtype).tobytes()
                if compression == T.COMPRESSION_DEFLATE:
                    raw = zlib.compress(raw, _DEFLATE_LEVEL)
                blocks.append(raw)
    return blocks, {"block_w": bw, "block_h": bh}


def _geokeys(crs: CrsId) -> list[int]:
    if crs.is_geographic:
        keys = [
            (T.GT_MODEL_TYPE, 0, 1, T.MODEL_TYPE_GEOGRAPHIC),
            (T.GT_RASTER_TYPE, 0, 1, T.RASTER_PIXEL_IS_AREA),
            (T.GEOGRAPHIC_TYPE, 0, 1, 4326),
        ]
    else:
        keys = [
            (T.GT_MODEL_TYPE, 0, 1, T.MODEL_TYPE_PROJECTED),
            (T.GT_RASTER_TYPE, 0, 1, T.RASTER_PIXEL_IS_AREA),
            (T.PROJECTED_CS_TYPE, 0, 1, crs.code),
        ]
    flat = [1, 1, 0, len(keys)]
    for k in keys:
        flat.extend(k)
    return flat


def _gdal_metadata_xml(tags: dict[str, str]) -> str:
    items = []
    for key in sorted(tags):
        name = xml.sax.saxutils.quoteattr(str(key))
        value = xml.sax.saxutils.escape(str(tags[key]))
        items.append(f"  <Item name={name}>{value}</Item>")
    return "<GDALMetadata>\n" + "\n".join(items) + "\n</GDALMetadata>\n"


def _format_nodata(nodata: float, np_dtype: np.dtype) -> str:
    if np_dtype.kind in "iu":
        return str(int(nodata))
    return repr(float(nodata))


def _value_size(ftype: int, values) -> int:
    if ftype == T.TYPE_ASCII:
        return len(values.encode("utf-8")) + 1
    return T.TYPE_SIZES[ftype] * len(values)


def _pack_values(ftype: int, values) -> bytes:
    if ftype == T.TYPE_ASCII:
        return values.encode("utf-8") + b"\x00"
    fmt = {T.TYPE_SHORT: "H", T.TYPE_LONG: "I", T.TYPE_DOUBLE: "d"}[ftype]
    return struct.pack(f"<{len(values)}{fmt}", *values)

"""Printable analytic overview for a completed task.

Self-contained HTML (inline styles, base64 thumbnail) whose numbers come
straight from the task's summary.json, so the document and the API never
disagree. PDF output is delegated to the browser's print pipeline.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from geochip.geo import GeoBBox, bbox_area_km2
from geochip.raster import RasterHandle, read_window
from geochip.geo import PixelWindow
from geochip.service.models import ModelEntry

_PAGE = """<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>Prediction report {task_id}</title>
<style>
 body {{ font-family: system-ui, sans-serif; margin: 2rem; color: #222; }}
 h1 {{ font-size: 1.4rem; }} table {{ border-collapse: collapse; margin: 1rem 0; }}
 td, th {{ border: 1px solid #999; padding: 0.35rem 0.8rem; text-align: right; }}
 th:first-child, td:first-child {{ text-align: left; }}
 .meta td {{ border: none; text-align: left; padding: 0.15rem 0.8rem 0.15rem 0; }}
 .swatch {{ display: inline-block; width: 0.9em; height: 0.9em; margin-right: 0.4em;
           border: 1px solid #555; vertical-align: -0.1em; }}
 img.map {{ border: 1px solid #555; image-rendering: pixelated; width: 320px; }}
 @media print {{ body {{ margin: 0.5in; }} }}
</style></head><body>
<h1>Prediction report</h1>
<table class="meta">
<tr><td>Task</td><td>{task_id}</td></tr>
<tr><td>Model</td><td>{model_name}</td></tr>
<tr><td>Date</td><td>{date}</td></tr>
<tr><td>AOI (W, S, E, N)</td><td>{bbox}</td></tr>
<tr><td>AOI area</td><td>{area_km2:.2f} km&sup2;</td></tr>
<tr><td>Submitted</td><td>{created_at}</td></tr>
</table>
<h2>Class areas</h2>
<table>
<tr><th>Class</th><th>Pixels</th><th>km&sup2;</th></tr>
{class_rows}
<tr><th>No data</th><td>{nodata_pixels}</td><td>{nodata_km2:.4f}</td></tr>
</table>
<p>Coverage: {total_pixels} pixels, no-data fraction {nodata_fraction:.2%}.</p>
<h2>Map</h2>
<img class="map" alt="prediction thumbnail" src="data:image/png;base64,{thumbnail}">
</body></html>
"""


def render_report(doc: dict, entry: ModelEntry,
                  cog_handles: list[RasterHandle]) -> str:
    request = doc["request"]
    summary = doc["outputs"]["summary"]
    bbox = GeoBBox.from_list(request["bbox"])

    rows = []
    for key in sorted(summary["classes"], key=int):
        info = summary["classes"][key]
        legend = entry.legend.get(int(key))
        name = legend.name if legend else f"class {key}"
        swatch = (f'<span class="swatch" style="background:{legend.color}"></span>'
                  if legend else "")
        rows.append(f"<tr><th>{swatch}{name}</th>"
                    f"<td>{info['pixels']}</td><td>{info['km2']:.4f}</td></tr>")

    nodata_pixels = summary["nodata_pixels"]
    total = summary["total_pixels"]
    pixel_area = summary["pixel_area_km2"] or 0.0

    return _PAGE.format(
        task_id=doc["task_id"],
        model_name=entry.display_name,
        date=request["date"],
        bbox=", ".join(f"{v:.5f}" for v in request["bbox"]),
        area_km2=bbox_area_km2(bbox),
        created_at=doc["created_at"],
        class_rows="\n".join(rows),
        nodata_pixels=nodata_pixels,
        nodata_km2=nodata_pixels * pixel_area,
        total_pixels=total,
        nodata_fraction=(nodata_pixels / total) if total else 0.0,
        thumbnail=_thumbnail_b64(cog_handles, entry),
    )


def _thumbnail_b64(handles: list[RasterHandle], entry: ModelEntry) -> str:
    """Colorized render of the first COG's coarsest overview."""
    if not handles:
        return ""
    handle = handles[0]
    level = handle.overview_count
    w, h = handle.level_shape(level)
    classes = read_window(handle, 1, PixelWindow(0, 0, w, h), level=level).values
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    for class_id, legend in entry.legend.items():
        mask = classes == class_id
        rgba[mask, 0], rgba[mask, 1], rgba[mask, 2] = legend.rgb()
        rgba[mask, 3] = 255
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")

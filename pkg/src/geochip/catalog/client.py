"""STAC item search against a remote API or a local fixture directory.

Remote access speaks the Item Search subset: POST /search with bbox,
datetime, collections and limit, pagination via links[rel=next]. Responses
are normalized into GranuleRef and always returned sorted by
(acquired_at, granule_id) so downstream grouping is deterministic.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path

import httpx

from geochip.errors import DataError, NetworkError
from geochip.geo import GeoBBox
from geochip.catalog.types import (
    CatalogSource,
    GranuleRef,
    SearchQuery,
    parse_rfc3339,
    tile_id_from_granule_id,
)

log = logging.getLogger(__name__)

TOKEN_ENV_VAR = "GEOCHIP_CATALOG_TOKEN"


def parse_item(doc: dict, base_dir=None, collection: str | None = None) -> GranuleRef:
    """Map a STAC item document onto GranuleRef.

    Missing eo:cloud_cover defaults to 100 (pessimistic: such granules only
    pass a disabled threshold). Missing id/datetime/bbox raise with the
    field named. Relative asset hrefs resolve against base_dir.
    """
    granule_id = doc.get("id")
    if not granule_id:
        raise DataError("item missing id")
    props = doc.get("properties") or {}
    dt_text = props.get("datetime")
    if not dt_text:
        raise DataError(f"item {granule_id}: missing properties.datetime")
    bbox = doc.get("bbox")
    if not bbox:
        raise DataError(f"item {granule_id}: missing bbox")

    cloud = props.get("eo:cloud_cover")
    cloud = 100.0 if cloud is None else float(cloud)

    assets = {}
    for key, asset in (doc.get("assets") or {}).items():
        href = asset.get("href") if isinstance(asset, dict) else None
        if not href:
            continue
        if base_dir is not None and "://" not in href:
            href = str((Path(base_dir) / href).resolve())
        assets[key] = href

    return GranuleRef(
        granule_id=str(granule_id),
        tile_id=tile_id_from_granule_id(str(granule_id)),
        acquired_at=parse_rfc3339(dt_text),
        cloud_cover=cloud,
        footprint=GeoBBox.from_list(bbox),
        assets=assets,
        collection=str(doc.get("collection") or collection or ""),
        properties=dict(props),
    )


class Catalog:
    """Search interface; construct via Catalog.open()."""

    @staticmethod
    def open(src: CatalogSource, **kwargs) -> "Catalog":
        if src.directory is not None:
            return LocalCatalog(src.directory)
        return RemoteCatalog(src.url, **kwargs)

    def search(self, q: SearchQuery) -> list[GranuleRef]:
        raise NotImplementedError

    def close(self):
        pass


def search(src: CatalogSource, q: SearchQuery) -> list[GranuleRef]:
    cat = Catalog.open(src)
    try:
        return cat.search(q)
    finally:
        cat.close()


def _match(g: GranuleRef, q: SearchQuery) -> bool:
    return (g.footprint.intersects(q.bbox)
            and q.datetime_start <= g.acquired_at <= q.datetime_end)


def _sorted(items: list[GranuleRef]) -> list[GranuleRef]:
    return sorted(items, key=lambda g: (g.acquired_at, g.granule_id))


class LocalCatalog(Catalog):
    """Fixture catalog: <dir>/collections/<name>/items/*.json."""

    def __init__(self, directory):
        self.root = Path(directory)
        if not self.root.is_dir():
            raise DataError(f"catalog directory {self.root} does not exist")

    def search(self, q: SearchQuery) -> list[GranuleRef]:
        items_dir = self.root / "collections" / q.collection / "items"
        if not items_dir.is_dir():
            return []
        hits = []
        for path in sorted(items_dir.glob("*.json")):
            try:
                doc = json.loads(path.read_text())
                granule = parse_item(doc, base_dir=path.parent, collection=q.collection)
            except (DataError, json.JSONDecodeError) as exc:
                log.warning("skipping malformed item %s: %s", path.name, exc)
                continue
            if _match(granule, q):
                hits.append(granule)
        hits = _sorted(hits)
        # page through the already-filtered list; result is limit-invariant
        out = []
        for start in range(0, len(hits), q.limit):
            out.extend(hits[start:start + q.limit])
        return out

    def all_items(self, collection: str) -> list[GranuleRef]:
        """Unfiltered parse of every item; used by brute-force test oracles."""
        items_dir = self.root / "collections" / collection / "items"
        out = []
        for path in sorted(items_dir.glob("*.json")):
            doc = json.loads(path.read_text())
            out.append(parse_item(doc, base_dir=path.parent, collection=collection))
        return out


class RemoteCatalog(Catalog):
    """STAC API client with bounded retries and a per-host concurrency cap."""

    def __init__(self, url: str, max_concurrency: int = 4, retries: int = 3,
                 backoff_base: float = 0.25, client: httpx.Client | None = None):
        self.base_url = url.rstrip("/")
        self._sem = threading.Semaphore(max_concurrency)
        self._retries = retries
        self._backoff_base = backoff_base
        self._client = client or httpx.Client(timeout=30.0, follow_redirects=True)
        self._owns_client = client is None
        self._headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            self._headers["Authorization"] = f"Bearer {token}"

    def close(self):
        if self._owns_client:
            self._client.close()

    def search(self, q: SearchQuery) -> list[GranuleRef]:
        body = {
            "collections": [q.collection],
            "bbox": q.bbox.as_list(),
            "datetime": (q.datetime_start.isoformat().replace("+00:00", "Z")
                         + "/" + q.datetime_end.isoformat().replace("+00:00", "Z")),
            "limit": q.limit,
        }
        url = self.base_url + "/search"
        out: list[GranuleRef] = []
        pages = 0
        while url:
            doc = self._post(url, body)
            for feature in doc.get("features", []):
                try:
                    granule = parse_item(feature, collection=q.collection)
                except DataError as exc:
                    log.warning("skipping malformed item in response: %s", exc)
                    continue
                if _match(granule, q):
                    out.append(granule)
            url, body = self._next_link(doc, body)
            pages += 1
            if pages > 10000:
                raise NetworkError("pagination did not terminate")
        return _sorted(out)

    def _next_link(self, doc: dict, prev_body: dict):
        for link in doc.get("links", []):
            if link.get("rel") == "next":
                href = link.get("href")
                body = link.get("body") if link.get("body") else prev_body
                if link.get("merge"):
                    merged = dict(prev_body)
                    merged.update(link.get("body") or {})
                    body = merged
                return href, body
        return None, None

    def _post(self, url: str, body: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self._retries + 1):
            if attempt:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                with self._sem:
                    resp = self._client.post(url, json=body, headers=self._headers)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code // 100 == 2:
                try:
                    return resp.json()
                except json.JSONDecodeError as exc:
                    raise NetworkError(f"catalog returned non-JSON body: {exc}") from exc
            if resp.status_code // 100 == 5 or resp.status_code == 429:
                last_exc = NetworkError(f"catalog HTTP {resp.status_code}")
                continue
            raise NetworkError(f"catalog HTTP {resp.status_code}: {resp.text[:200]}")
        raise NetworkError(f"catalog unreachable after {self._retries + 1} attempts: {last_exc}")

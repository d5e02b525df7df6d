"""Catalog domain types."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

from geochip.errors import DataError
from geochip.geo import GeoBBox

_MGRS_TOKEN = re.compile(r"^T\d{2}[A-Z]{3}$")


def parse_rfc3339(text: str) -> datetime:
    """RFC 3339 timestamp -> aware UTC datetime."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad RFC 3339 timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def tile_id_from_granule_id(granule_id: str) -> str:
    """MGRS-style token embedded in the id (e.g. HLS naming), else the id itself."""
    for token in granule_id.split("."):
        if _MGRS_TOKEN.match(token):
            return token
    return granule_id


@dataclass(frozen=True)
class GranuleRef:
    """One satellite acquisition of one tile at one time."""

    granule_id: str
    tile_id: str
    acquired_at: datetime
    cloud_cover: float
    footprint: GeoBBox
    assets: dict[str, str]
    collection: str
    properties: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.cloud_cover <= 100.0:
            raise DataError(f"cloud_cover out of [0,100]: {self.cloud_cover}")

    def has_bands(self, keys) -> bool:
        return all(k in self.assets for k in keys)


@dataclass(frozen=True)
class SearchQuery:
    collection: str
    bbox: GeoBBox
    datetime_start: datetime
    datetime_end: datetime
    limit: int = 100

    def __post_init__(self):
        if self.datetime_start > self.datetime_end:
            raise DataError("datetime_start must be <= datetime_end")
        if self.limit <= 0:
            raise DataError("limit must be positive")


@dataclass(frozen=True)
class CatalogSource:
    """Exactly one of url / directory is set."""

    url: str | None = None
    directory: str | None = None

    def __post_init__(self):
        if (self.url is None) == (self.directory is None):
            raise DataError("catalog source needs exactly one of url or directory")

    @classmethod
    def remote(cls, url: str) -> "CatalogSource":
        return cls(url=url)

    @classmethod
    def local(cls, directory) -> "CatalogSource":
        return cls(directory=str(directory))

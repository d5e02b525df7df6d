"""STAC catalog access: item search over HTTP or a local fixture directory."""

from geochip.catalog.types import CatalogSource, GranuleRef, SearchQuery
from geochip.catalog.client import Catalog, LocalCatalog, RemoteCatalog, parse_item, search
from geochip.catalog.fixtures import FixtureLayout, FixtureTileSpec, generate_fixture

__all__ = [
    "CatalogSource",
    "GranuleRef",
    "SearchQuery",
    "Catalog",
    "LocalCatalog",
    "RemoteCatalog",
    "parse_item",
    "search",
    "FixtureLayout",
    "FixtureTileSpec",
    "generate_fixture",
]

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (usage=2, data=3, network=4, internal=5),
so raising the right class matters more than the message wording.
"""


class GeochipError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GeochipError):
    """Malformed or out-of-contract input data (CSV rows, TIFF bytes, ranges)."""


class NetworkError(GeochipError):
    """Remote catalog or asset unreachable after retries."""


class DomainError(GeochipError):
    """Mathematically invalid argument (latitude beyond projection limit, bad zone)."""


class NoImageryError(GeochipError):
    """No granule satisfies the temporal/spatial constraints for any tile."""

    def __init__(self, tiles: list[str]):
        self.tiles = list(tiles)
        detail = ", ".join(self.tiles) if self.tiles else "none found"
        super().__init__(f"no imagery within tolerance for tiles: {detail}")

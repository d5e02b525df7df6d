"""Observation CSV loading."""

from __future__ import annotations

import csv
from datetime import date as Date
from pathlib import Path

from geochip.errors import DataError
from geochip.chips.types import Observation

REQUIRED_COLUMNS = ("lon", "lat", "date", "label")


def load_observations(csv_path) -> list[Observation]:
    """Parse `lon,lat,date,label` rows; errors carry the 1-based line number."""
    path = Path(csv_path)
    if not path.is_file():
        raise DataError(f"observation file {path} does not exist")
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path.name}: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                obs = Observation(
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    date=Date.fromisoformat(row["date"].strip()),
                    label=int(row["label"]),
                )
            except (TypeError, ValueError, DataError) as exc:
                raise DataError(f"{path.name} line {line}: {exc}") from exc
            out.append(obs)
    return out

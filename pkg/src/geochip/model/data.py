"""Dataset loading: chip/label manifests -> normalized arrays."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from geochip.errors import DataError
from geochip.chips import load_chip_pair

# HLS-style surface reflectance scaling
DEFAULT_SCALE = 10000.0


@dataclass
class Dataset:
    chips: np.ndarray  # (N, T, C, H, W) float32, normalized
    labels: np.ndarray  # (N, H, W) uint8, 255 = ignore

    def __post_init__(self):
        if self.chips.ndim != 5:
            raise DataError(f"chips must be 5-D, got {self.chips.shape}")
        if self.labels.shape != (self.chips.shape[0],) + self.chips.shape[3:]:
            raise DataError("labels shape inconsistent with chips")

    def __len__(self):
        return self.chips.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.chips[idx], self.labels[idx])


def read_manifest(manifest_csv) -> list[tuple[str, str]]:
    path = Path(manifest_csv)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or "chip" not in reader.fieldnames \
                or "label" not in reader.fieldnames:
            raise DataError(f"{path.name}: manifest needs chip,label columns")
        for row in reader:
            rows.append((row["chip"], row["label"]))
    return rows


def load_dataset(manifest_csv, scale: float = DEFAULT_SCALE) -> Dataset:
    """Load every pair in a manifest; invalid pixels become 0 after scaling."""
    base = Path(manifest_csv).parent
    rows = read_manifest(manifest_csv)
    if not rows:
        raise DataError(f"manifest {manifest_csv} is empty")
    chips = []
    labels = []
    for chip_rel, label_rel in rows:
        chip, seg = load_chip_pair(base / chip_rel, base / label_rel)
        x = chip.values.astype(np.float32) / scale
        x[~chip.valid] = 0.0
        chips.append(x)
        labels.append(seg.labels)
    shapes = {c.shape for c in chips}
    if len(shapes) != 1:
        raise DataError(f"manifest mixes chip shapes: {sorted(shapes)}")
    return Dataset(np.stack(chips), np.stack(labels))

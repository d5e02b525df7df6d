"""Synthetic patch-coherent segmentation task for desk-scale training checks.

Each patch-aligned cell draws a latent intensity; the cell's class is the
sign of the latent, and every band carries the latent plus noise, so the
label is a band-sum threshold that a small transformer can learn. Hard
labels can be sparsified (random pixels -> ignore) to mimic the point-label
regime the chip pipeline produces; evaluation maps stay dense.
"""

from __future__ import annotations

import numpy as np

from geochip.model.data import Dataset

IGNORE = 255


def synthetic_dataset(n_samples: int, seed: int, image_size: int = 32,
                      patch: int = 8, bands: int = 3, timesteps: int = 1,
                      noise: float = 0.25, label_fraction: float = 1.0) -> Dataset:
    rng = np.random.default_rng([seed, 0x5EED])
    grid = image_size // patch

    latent = rng.uniform(-1.0, 1.0, size=(n_samples, grid, grid)).astype(np.float32)
    cells = np.kron(latent, np.ones((patch, patch), dtype=np.float32))
    labels_dense = (cells > 0).astype(np.uint8)

    weights = rng.uniform(0.6, 1.4, size=(timesteps, bands)).astype(np.float32)
    chips = (cells[:, None, None, :, :] * weights[None, :, :, None, None]
             + noise * rng.standard_normal(
                 (n_samples, timesteps, bands, image_size, image_size)).astype(np.float32))

    labels = labels_dense.copy()
    if label_fraction < 1.0:
        keep = rng.random(labels.shape) < label_fraction
        labels = np.where(keep, labels, np.uint8(IGNORE)).astype(np.uint8)

    return Dataset(chips.astype(np.float32), labels)

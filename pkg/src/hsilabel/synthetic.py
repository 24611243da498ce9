"""Seeded synthetic scenes for desk-scale end-to-end runs.

Each class has a distinct Gaussian-bump mean spectrum; pixels add i.i.d.
within-class noise whose sigma is far below the inter-class separation, so
the scene is spectrally separable by construction.
"""

from __future__ import annotations

import numpy as np

from hsilabel.prep import HsiCube


def class_spectra(num_classes: int, bands: int, amplitude: float = 1.0,
                  width_frac: float = 0.08) -> np.ndarray:
    """Mean spectra [K][B]: Gaussian bumps at evenly spaced band centers."""
    centers = (np.arange(num_classes) + 0.5) * bands / num_classes
    width = max(width_frac * bands, 0.8)
    band_idx = np.arange(bands)
    return amplitude * np.exp(-0.5 * ((band_idx[None, :] - centers[:, None]) / width) ** 2)


def block_labels(height: int, width: int, num_classes: int) -> np.ndarray:
    """Tile the image into a near-square grid of class blocks, 0..K-1."""
    side = int(np.ceil(np.sqrt(num_classes)))
    rows = np.minimum(np.arange(height) * side // height, side - 1)
    cols = np.minimum(np.arange(width) * side // width, side - 1)
    grid = (rows[:, None] * side + cols[None, :]) % num_classes
    return grid.astype(np.uint16)


def make_synthetic_scene(height: int, width: int, num_classes: int, bands: int,
                         rng: np.random.Generator, noise_sigma: float = 0.1
                         ) -> tuple[HsiCube, np.ndarray]:
    """Build a separable scene; returns the cube and its ground truth.

    The within-class sigma is checked against the minimum inter-class mean
    distance so class means stay separated by at least 3 sigma.
    """
    means = class_spectra(num_classes, bands)
    dists = [np.linalg.norm(means[i] - means[j])
             for i in range(num_classes) for j in range(i + 1, num_classes)]
    if dists and min(dists) < 3.0 * noise_sigma:
        raise ValueError("class spectra are not separated by 3 within-class sigma")
    gt = block_labels(height, width, num_classes)
    values = means[gt.astype(np.int64)] + rng.normal(0.0, noise_sigma,
                                                     size=(height, width, bands))
    wavelengths = np.linspace(430.0, 690.0, bands)
    return HsiCube(values.astype(np.float32), wavelengths), gt

"""Hyperspectral preprocessing.

RGB proxy synthesis from band interpolation, per-band z-score
normalization, and training-time Gaussian noise augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Target wavelengths (nm) for the red, green, blue proxy channels.
RGB_WAVELENGTHS_NM = (655.0, 553.0, 451.0)

#: Percentiles for the per-channel contrast stretch of the RGB proxy.
STRETCH_PERCENTILES = (2.0, 98.0)

#: Floor applied to per-band standard deviations during normalization.
STD_FLOOR = 1e-8


@dataclass
class HsiCube:
    """Hyperspectral cube [H][W][B] with per-band wavelengths in nm."""

    values: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"cube must be [H][W][B], got shape {self.values.shape}")
        if self.wavelengths.ndim != 1 or len(self.wavelengths) != self.values.shape[2]:
            raise ValueError("wavelength count must equal the band count")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cube values must be finite")

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape


@dataclass
class BandStats:
    """Per-band mean and (floored) standard deviation."""

    mean: np.ndarray
    std: np.ndarray


def load_wavelengths(path) -> np.ndarray:
    """Read wavelengths from a plain-text file, one float (nm) per line."""
    with open(path) as f:
        vals = [float(line) for line in f if line.strip()]
    return np.asarray(vals, dtype=np.float64)


def save_wavelengths(wavelengths: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for w in np.asarray(wavelengths, dtype=np.float64):
            f.write(f"{float(w)!r}\n")


def _interp_band(cube: HsiCube, target_nm: float) -> np.ndarray:
    wl = cube.wavelengths
    if target_nm <= wl[0]:
        return cube.values[:, :, 0].astype(np.float64)
    if target_nm >= wl[-1]:
        return cube.values[:, :, -1].astype(np.float64)
    hi = int(np.searchsorted(wl, target_nm))
    lo = hi - 1
    t = (target_nm - wl[lo]) / (wl[hi] - wl[lo])
    a = cube.values[:, :, lo].astype(np.float64)
    b = cube.values[:, :, hi].astype(np.float64)
    return (1.0 - t) * a + t * b


def interpolate_rgb(cube: HsiCube, stretch: bool = True) -> np.ndarray:
    """Synthesize an [H][W][3] RGB proxy in [0, 1] from the cube.

    Each channel linearly interpolates the two bands bracketing its target
    wavelength (clamping to the nearest band outside the covered range).
    With ``stretch`` the channels are contrast-stretched to the 2nd-98th
    percentile and clamped to [0, 1].
    """
    if cube.bands < 2:
        raise ValueError("at least 2 bands required for RGB synthesis")
    channels = [_interp_band(cube, nm) for nm in RGB_WAVELENGTHS_NM]
    rgb = np.stack(channels, axis=-1)
    if stretch:
        lo_p, hi_p = STRETCH_PERCENTILES
        for c in range(3):
            ch = rgb[:, :, c]
            lo, hi = np.percentile(ch, [lo_p, hi_p])
            if hi - lo < 1e-12:
                rgb[:, :, c] = 0.0
            else:
                rgb[:, :, c] = np.clip((ch - lo) / (hi - lo), 0.0, 1.0)
    return rgb.astype(np.float32)


def normalize_spectra(cube: HsiCube) -> tuple[HsiCube, BandStats]:
    """Per-band z-score over all pixels; returns the stats for inversion."""
    vals = cube.values.astype(np.float64)
    mean = vals.mean(axis=(0, 1))
    std = np.maximum(vals.std(axis=(0, 1)), STD_FLOOR)
    out = ((vals - mean) / std).astype(np.float32)
    return HsiCube(out, cube.wavelengths), BandStats(mean=mean, std=std)


def add_gaussian_noise(batch: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb spectra by i.i.d. zero-mean Gaussian noise of the given std."""
    if std < 0:
        raise ValueError("noise std must be non-negative")
    batch = np.asarray(batch)
    if std == 0:
        return batch.copy()
    noise = rng.normal(0.0, std, size=batch.shape)
    return (batch + noise).astype(batch.dtype)

"""Magnitude encoding: scalar intensities become d-dimensional vectors.

Each input scalar in [-1, 1] is compared against d evenly spaced centers
spanning [-1, 1] and encoded either as Gaussian bumps or as ReLU triangles.
The point is that different intensity levels land on different vector
components, so intensity information survives architectures that fuse
features late.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MEConfig", "centers", "encode_gaussian", "encode_triangle", "encode"]

# excursions beyond [-1, 1] up to this much are treated as rounding and clamped
CLAMP_TOLERANCE = 1e-6

VARIANTS = ("gaussian", "triangle")


@dataclass(frozen=True)
class MEConfig:
    """Encoding dimensionality ``d``, Gaussian width ``sigma``, and variant."""

    d: int = 20
    sigma: float = 0.28
    variant: str = "gaussian"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"encoding dimensionality must be >= 2, got {self.d}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        # keep sigma representable in float32 so checkpoints round-trip exactly
        object.__setattr__(self, "sigma", float(np.float32(self.sigma)))


def centers(d: int, dtype=np.float32) -> np.ndarray:
    """The d encoding centers 2*j/(d-1) - 1, exactly symmetric about 0."""
    dtype = np.dtype(dtype)
    # integer numerator keeps c_j == -c_{d-1-j} bit-exact
    return ((2 * np.arange(d) - (d - 1)) / dtype.type(d - 1)).astype(dtype)


def _validated(x, dtype) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(np.float32)
    if dtype is not None:
        arr = arr.astype(dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError("encoding input contains non-finite values")
    low, high = arr.min(initial=0.0), arr.max(initial=0.0)
    if low < -1.0 - CLAMP_TOLERANCE or high > 1.0 + CLAMP_TOLERANCE:
        raise ValueError(f"encoding input outside [-1, 1]: range [{low}, {high}]")
    if low < -1.0 or high > 1.0:
        arr = np.clip(arr, -1.0, 1.0)
    return arr


def encode_gaussian(x, cfg: MEConfig, dtype=None) -> np.ndarray:
    """Gaussian encoding exp(-(x - c_j)^2 / (2 sigma^2)), one bump per center.

    Every component is strictly positive, so all d features carry a
    contribution from the encoded value. Output shape is input shape + (d,).
    """
    arr = _validated(x, dtype)
    c = centers(cfg.d, arr.dtype)
    diff = arr[..., None] - c
    denom = arr.dtype.type(2.0 * cfg.sigma * cfg.sigma)
    return np.exp(-(diff * diff) / denom)


def encode_triangle(x, cfg: MEConfig, dtype=None) -> np.ndarray:
    """Triangle encoding max(0, 1 - |x - c_j| / delta) with delta one center gap.

    Peaks at 1 on each center and decays linearly to 0 at the adjacent
    centers, so at most two components are non-zero.
    """
    arr = _validated(x, dtype)
    c = centers(cfg.d, arr.dtype)
    delta = arr.dtype.type(2.0 / (cfg.d - 1))
    return np.maximum(0, 1 - np.abs(arr[..., None] - c) / delta)


def encode(x, cfg: MEConfig, dtype=None) -> np.ndarray:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "gaussian":
        return encode_gaussian(x, cfg, dtype)
    return encode_triangle(x, cfg, dtype)

"""Rendering TL fields to portable graymaps.

PGM (binary P5) needs no imaging dependency and opens anywhere.  The dB to
gray mapping is fixed linear over [0, 200] so renders from different runs
compare directly: 0 dB maps to black, the 200 dB sub-bottom plateau to
white.  Image rows run down the water column, columns out in range.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["render_pgm", "to_gray"]

RENDER_DB_LO = 0.0
RENDER_DB_HI = 200.0


def to_gray(values, lo: float = RENDER_DB_LO, hi: float = RENDER_DB_HI) -> np.ndarray:
    """Map dB values linearly onto uint8 [0, 255], clipping outside [lo, hi].

    Input is ``(n_range, n_depth)``; output is image-ordered
    ``(n_depth, n_range)`` with the surface in the top row.
    """
    if hi <= lo:
        raise ConfigError(f"gray mapping needs hi > lo, got [{lo}, {hi}]")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ConfigError(f"expected a 2-d field, got shape {v.shape}")
    unit = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(unit * 255.0).astype(np.uint8).T


def render_pgm(path, values, lo: float = RENDER_DB_LO,
               hi: float = RENDER_DB_HI) -> None:
    """Write a binary 8-bit PGM of a TL field."""
    gray = to_gray(values, lo, hi)
    height, width = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())

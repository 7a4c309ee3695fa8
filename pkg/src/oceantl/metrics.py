"""Field comparison metrics: SSIM, probe-depth transects, dB error reports.

SSIM follows the classic windowed form: local means, variances, and
covariance under an 11x11 Gaussian window (sigma 1.5), combined per window
and averaged over all fully interior windows (valid mode, no padding).
Scores are computed on raw dB fields by default; set
``SsimConfig.normalized`` to map both fields through their shared range onto
[0, 1] first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fields import TLField, MaskGrid

__all__ = [
    "SsimConfig",
    "Transect",
    "ErrorReport",
    "ssim",
    "ssim_map",
    "transect",
    "error_summary",
]


@dataclass(frozen=True)
class SsimConfig:
    """Window and stabilization constants for :func:`ssim`.

    ``dynamic_range`` defaults to the joint range of the two fields being
    compared (max minus min over both), which keeps the score symmetric in
    its arguments; pass an explicit value to compare runs on equal footing.
    """

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float | None = None
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ConfigError("window size must be odd and at least 3")
        if self.window_sigma <= 0:
            raise ConfigError("window sigma must be positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("stabilization constants must be positive")
        if self.dynamic_range is not None and self.dynamic_range <= 0:
            raise ConfigError("dynamic range must be positive")

    def kernel(self) -> np.ndarray:
        """Normalized 1-D Gaussian tap weights for the separable window."""
        half = self.window_size // 2
        x = np.arange(-half, half + 1, dtype=np.float64)
        k = np.exp(-0.5 * (x / self.window_sigma) ** 2)
        return k / k.sum()


@dataclass(frozen=True)
class Transect:
    """TL versus range along one grid row, for a requested probe depth."""

    probe_depth_m: float
    row_index: int
    snapped_depth_m: float
    ranges_m: np.ndarray
    tl_pred_db: np.ndarray
    tl_true_db: np.ndarray

    def __post_init__(self) -> None:
        if not (
            self.ranges_m.size == self.tl_pred_db.size == self.tl_true_db.size
        ):
            raise ConfigError("transect columns must have equal lengths")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["range_m", "tl_pred_db", "tl_true_db"])
            for r, p, t in zip(self.ranges_m, self.tl_pred_db, self.tl_true_db):
                w.writerow([f"{r:.6g}", f"{p:.6g}", f"{t:.6g}"])


@dataclass(frozen=True)
class ErrorReport:
    """Water-column error statistics plus similarity scores."""

    n_water: int
    mean_abs_db: float
    rmse_db: float
    p95_abs_db: float
    ssim: float
    ssim_water: float
    dynamic_range: float
    normalized: bool = False

    def to_dict(self) -> dict:
        return {
            "n_water": self.n_water,
            "mean_abs_db": self.mean_abs_db,
            "rmse_db": self.rmse_db,
            "p95_abs_db": self.p95_abs_db,
            "ssim": self.ssim,
            "ssim_water": self.ssim_water,
            "dynamic_range": self.dynamic_range,
            "normalized": self.normalized,
        }


def _values(x) -> np.ndarray:
    if isinstance(x, TLField):
        return np.asarray(x.values, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _sep_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Correlate with a separable kernel along both axes, valid mode."""
    n = k.size
    rows = x.shape[0] - n + 1
    cols = x.shape[1] - n + 1
    out = np.zeros((rows, x.shape[1]))
    for i in range(n):
        out += k[i] * x[i : i + rows, :]
    out2 = np.zeros((rows, cols))
    for j in range(n):
        out2 += k[j] * out[:, j : j + cols]
    return out2


def ssim_map(a, b, cfg: SsimConfig | None = None) -> np.ndarray:
    """Local SSIM map over all fully interior windows.

    Shape is the input shape minus window_size - 1 per axis.
    """
    cfg = cfg or SsimConfig()
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise ConfigError(f"field shapes differ: {av.shape} vs {bv.shape}")
    if min(av.shape) < cfg.window_size:
        raise ConfigError(
            f"fields smaller than the {cfg.window_size}x{cfg.window_size} window"
        )
    lo = min(av.min(), bv.min())
    hi = max(av.max(), bv.max())
    if cfg.normalized:
        span = hi - lo if hi > lo else 1.0
        av = (av - lo) / span
        bv = (bv - lo) / span
        L = 1.0
    elif cfg.dynamic_range is not None:
        L = cfg.dynamic_range
    else:
        L = hi - lo if hi > lo else 1.0
    c1 = (cfg.k1 * L) ** 2
    c2 = (cfg.k2 * L) ** 2
    k = cfg.kernel()
    mu_a = _sep_valid(av, k)
    mu_b = _sep_valid(bv, k)
    var_a = _sep_valid(av * av, k) - mu_a * mu_a
    var_b = _sep_valid(bv * bv, k) - mu_b * mu_b
    cov = _sep_valid(av * bv, k) - mu_a * mu_b
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )


def ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Mean structural similarity between two equally shaped fields.

    1.0 means identical; scores can dip below 0 for anticorrelated
    structure. Symmetric in its arguments under the default dynamic range.
    """
    return float(ssim_map(a, b, cfg).mean())


def transect(pred: TLField, truth: TLField, probe_depth_m: float) -> Transect:
    """Extract TL vs range from both fields at the row nearest a depth."""
    if pred.grid != truth.grid:
        raise ConfigError("prediction and truth grids differ")
    grid = pred.grid
    if not 0.0 <= probe_depth_m <= grid.depth_extent_m:
        raise ConfigError(
            f"probe depth {probe_depth_m} m outside [0, {grid.depth_extent_m}]"
        )
    row = int(np.floor(probe_depth_m / grid.dz + 0.5))
    row = min(row, grid.n_depth - 1)
    return Transect(
        probe_depth_m=float(probe_depth_m),
        row_index=row,
        snapped_depth_m=float(row * grid.dz),
        ranges_m=grid.range_axis.copy(),
        tl_pred_db=pred.values[:, row].astype(np.float64),
        tl_true_db=truth.values[:, row].astype(np.float64),
    )


def error_summary(
    pred: TLField,
    truth: TLField,
    mask: MaskGrid,
    cfg: SsimConfig | None = None,
) -> ErrorReport:
    """Compare a prediction against ground truth over the water column.

    The absolute-error statistics cover water cells only; the headline SSIM
    covers the full grid including the sub-bottom plateau (the fields are
    compared as rendered), and a water-only SSIM over windows centered on
    water cells is reported alongside.
    """
    cfg = cfg or SsimConfig()
    pv, tv = _values(pred), _values(truth)
    if pv.shape != tv.shape:
        raise ConfigError(f"field shapes differ: {pv.shape} vs {tv.shape}")
    if mask.values.shape != pv.shape:
        raise ConfigError("mask shape does not match the fields")
    water = mask.water
    if not water.any():
        raise ConfigError("mask has no water cells")
    diff = np.abs(pv - tv)[water]
    lo = min(pv.min(), tv.min())
    hi = max(pv.max(), tv.max())
    L = hi - lo if hi > lo else 1.0
    smap = ssim_map(pred, truth, cfg)
    half = cfg.window_size // 2
    centers = water[half:-half, half:-half]
    return ErrorReport(
        n_water=int(water.sum()),
        mean_abs_db=float(diff.mean()),
        rmse_db=float(np.sqrt(np.mean(diff * diff))),
        p95_abs_db=float(np.percentile(diff, 95)),
        ssim=float(smap.mean()),
        ssim_water=float(smap[centers].mean()) if centers.any() else float("nan"),
        dynamic_range=float(L if cfg.dynamic_range is None else cfg.dynamic_range),
        normalized=cfg.normalized,
    )

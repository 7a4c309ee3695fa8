"""Closed-form image-source field for an isovelocity flat-bottom waveguide.

Mirroring a point source across the sea surface (reflection coefficient
``surface_sign``) and the seafloor (``bottom_sign``) unfolds the waveguide
into a doubly infinite image ladder. Image depths and coefficients follow
two families indexed by the unfolding order m:

* ``z = 2 m D + z_src`` with coefficient ``(Rs Rb) ** |m|``
* ``z = 2 m D - z_src`` with coefficient ``Rs**(m-1) Rb**m`` for m >= 1 and
  ``Rs**(|m|+1) Rb**|m|`` for m <= 0.

Each image contributes ``exp(i k R) / sqrt(R)``: the domain is the 2D
range/depth plane, so spreading is cylindrical and the unit reference
pressure sits at 1 m (direct-path TL is ``10 log10 r``).

The lossless sum converges only conditionally, so high orders are rolled
off with a cosine taper; doubling the order budget then moves the summed
field by well under the grid tolerances used in tests.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError
from .fields import DEFAULT_CLIP_DB, GridSpec, TLField, tl_from_pressure

DEFAULT_IMAGE_ORDERS = 512


def waveguide_images(
    z_src_m: float,
    depth_m: float,
    n_orders: int,
    surface_sign: float = -1.0,
    bottom_sign: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Image depths, reflection coefficients, and unfolding orders.

    Returns
    -------
    positions : ndarray
        Vertical image positions (meters, source-positive convention).
    coefficients : ndarray
        Accumulated product of boundary reflection coefficients per image.
    orders : ndarray
        |m| per image, used for taper weighting.
    """
    if not 0.0 < z_src_m < depth_m:
        raise NumericsError("source must sit strictly inside the water column")
    pos, coef, order = [z_src_m], [1.0], [0]
    rs, rb = float(surface_sign), float(bottom_sign)
    for m in range(0, n_orders + 1):
        if m > 0:
            pos.append(2.0 * m * depth_m + z_src_m)
            coef.append((rs * rb) ** m)
            order.append(m)
        pos.append(-(2.0 * m * depth_m + z_src_m))
        coef.append(rs ** (m + 1) * rb**m)
        order.append(m)
        if m >= 1:
            pos.append(2.0 * m * depth_m - z_src_m)
            coef.append(rs ** (m - 1) * rb**m)
            order.append(m)
            pos.append(-(2.0 * m * depth_m - z_src_m))
            coef.append(rs**m * rb**m)
            order.append(m)
    return np.asarray(pos), np.asarray(coef), np.asarray(order)


def _taper_weights(orders: np.ndarray, n_orders: int, taper_fraction: float) -> np.ndarray:
    """Cosine roll-off over the deepest ``taper_fraction`` of orders."""
    if taper_fraction <= 0:
        return np.ones_like(orders, dtype=np.float64)
    start = int(np.floor((1.0 - taper_fraction) * n_orders))
    w = np.ones(orders.shape, dtype=np.float64)
    tail = orders >= start
    span = max(n_orders - start + 1, 1)
    w[tail] = 0.5 * (1.0 + np.cos(np.pi * (orders[tail] - start) / span))
    return w


def image_source_pressure(
    range_m: np.ndarray,
    depth_m: np.ndarray,
    z_src_m: float,
    water_depth_m: float,
    speed_mps: float,
    frequency_hz: float,
    n_orders: int = DEFAULT_IMAGE_ORDERS,
    surface_sign: float = -1.0,
    bottom_sign: float = 1.0,
    taper_fraction: float = 0.25,
    max_path_m: float | None = None,
    aperture_deg: float | None = None,
) -> np.ndarray:
    """Complex pressure from the tapered image sum, unit source at 1 m.

    ``max_path_m`` and ``aperture_deg`` optionally drop images whose direct
    path exceeds a length cap or leaves a launch-angle cone; tests use these
    to mimic a truncated ray fan, production callers leave them unset.
    """
    r = np.asarray(range_m, dtype=np.float64)
    z = np.asarray(depth_m, dtype=np.float64)
    r, z = np.broadcast_arrays(r, z)
    shape = r.shape
    r = r.ravel()
    z = z.ravel()

    pos, coef, order = waveguide_images(z_src_m, water_depth_m, n_orders, surface_sign, bottom_sign)
    coef = coef * _taper_weights(order, n_orders, taper_fraction)
    live = coef != 0.0
    pos, coef = pos[live], coef[live]

    k = 2.0 * np.pi * frequency_hz / speed_mps
    p = np.zeros(r.size, dtype=np.complex128)
    # Chunk the image ladder to keep the distance matrix small.
    chunk = max(1, int(4e6 // max(r.size, 1)) or 1)
    for a in range(0, pos.size, chunk):
        zi = pos[a : a + chunk]
        ci = coef[a : a + chunk]
        dist = np.sqrt(r[:, None] ** 2 + (z[:, None] - zi[None, :]) ** 2)
        if np.any(dist < 1e-9):
            raise NumericsError("receiver coincides with an image source")
        w = ci[None, :].astype(np.complex128)
        if max_path_m is not None:
            w = np.where(dist <= max_path_m, w, 0.0)
        if aperture_deg is not None:
            sin_launch = np.abs(z[:, None] - zi[None, :]) / dist
            w = np.where(sin_launch <= np.sin(np.radians(aperture_deg)), w, 0.0)
        p += np.sum(w * np.exp(1j * k * dist) / np.sqrt(dist), axis=1)
    if not np.all(np.isfinite(p)):
        raise NumericsError("image sum produced non-finite pressure")
    return p.reshape(shape)


def image_source_reference(
    grid: GridSpec,
    z_src_m: float,
    water_depth_m: float,
    speed_mps: float,
    frequency_hz: float,
    n_orders: int = DEFAULT_IMAGE_ORDERS,
    surface_sign: float = -1.0,
    bottom_sign: float = 1.0,
    taper_fraction: float = 0.25,
    clip_db: float = DEFAULT_CLIP_DB,
) -> TLField:
    """Reference TL field on a grid for the flat isovelocity waveguide.

    Parameters
    ----------
    grid : GridSpec
        Receiver grid; depths below ``water_depth_m`` are clipped.
    z_src_m : float
        Source depth, strictly inside the column.
    water_depth_m : float
        Waveguide depth (flat bottom).
    speed_mps, frequency_hz : float
        Medium speed and tone frequency.
    n_orders : int
        Unfolding order budget; the deepest quarter is tapered.

    Returns
    -------
    TLField
    """
    p = image_source_pressure(
        grid.range_axis[:, None],
        grid.depth_axis[None, :],
        z_src_m,
        water_depth_m,
        speed_mps,
        frequency_hz,
        n_orders=n_orders,
        surface_sign=surface_sign,
        bottom_sign=bottom_sign,
        taper_fraction=taper_fraction,
    )
    tl = tl_from_pressure(p, clip_db)
    tl[:, grid.depth_axis >= water_depth_m - 1e-9] = clip_db
    meta = {
        "kind": "image_reference",
        "frequency_hz": frequency_hz,
        "z_src_m": z_src_m,
        "water_depth_m": water_depth_m,
        "speed_mps": speed_mps,
        "n_orders": n_orders,
    }
    return TLField(grid, tl.astype(np.float32), clip_db=clip_db, meta=meta)

"""Layer kernels: conv, transpose conv, batchnorm, activations, pooling.

Convolutions use im2col/col2im; the transpose convolution is implemented
through the same two primitives with their roles exchanged, which makes the
adjoint relationship explicit: conv backward-to-input is exactly transpose
conv forward and vice versa.

Weight layouts follow the usual conventions: conv weights are
(out_ch, in_ch, k, k); transpose-conv weights are (in_ch, out_ch, k, k);
dense weights are (in_features, out_features).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

__all__ = [
    "conv2d_fwd",
    "conv2d_bwd",
    "conv2d_transpose_fwd",
    "conv2d_transpose_bwd",
    "batchnorm_fwd",
    "batchnorm_bwd",
    "leaky_relu_fwd",
    "leaky_relu_bwd",
    "maxpool2_fwd",
    "maxpool2_bwd",
    "upsample2_fwd",
    "upsample2_bwd",
    "dense_fwd",
    "dense_bwd",
]


def _check4(x: np.ndarray, who: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{who} expects a (batch, ch, h, w) tensor, got {x.shape}")


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Stack kernel-footprint patches into (batch, in_ch*k*k, positions)."""
    b, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"kernel {k}x{k} stride {stride} pad {padding} does not fit "
            f"input {x.shape}"
        )
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (b, c, ho, wo, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), (ho, wo)


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int):
    """Scatter-add patch stacks back onto the (padded, then cropped) image."""
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        he = i + stride * ho
        for j in range(k):
            we = j + stride * wo
            out[:, :, i:he:stride, j:we:stride] += patches[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d_fwd(x, w, b, stride: int = 1, padding: int = 0):
    """Cross-correlation; returns (y, ctx) with y (batch, out_ch, h', w')."""
    _check4(x, "conv2d")
    co, ci, k, k2 = w.shape
    if k != k2 or ci != x.shape[1]:
        raise ShapeError(f"conv weight {w.shape} incompatible with input {x.shape}")
    cols, (ho, wo) = _im2col(x, k, stride, padding)
    w2 = w.reshape(co, ci * k * k)
    y = np.einsum("oc,bcp->bop", w2, cols, optimize=True)
    y = y.reshape(x.shape[0], co, ho, wo) + b[None, :, None, None]
    return y, (x.shape, w, cols, stride, padding)


def conv2d_bwd(ctx, dy):
    """Gradients (dx, dw, db) of conv2d_fwd."""
    x_shape, w, cols, stride, padding = ctx
    co, ci, k, _ = w.shape
    b = dy.shape[0]
    dy2 = dy.reshape(b, co, -1)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.einsum("bop,bcp->oc", dy2, cols, optimize=True).reshape(w.shape)
    w2 = w.reshape(co, ci * k * k)
    dcols = np.einsum("oc,bop->bcp", w2, dy2, optimize=True)
    dx = _col2im(dcols, x_shape, k, stride, padding)
    return dx, dw, db


def conv2d_transpose_fwd(x, w, b, stride: int = 1, padding: int = 0,
                         output_padding: int = 0):
    """Adjoint of conv2d; with stride 2, k 3, padding 1, output_padding 1
    the spatial dims double."""
    _check4(x, "conv2d_transpose")
    ci, co, k, k2 = w.shape
    if k != k2 or ci != x.shape[1]:
        raise ShapeError(
            f"transpose-conv weight {w.shape} incompatible with input {x.shape}"
        )
    if output_padding >= stride:
        raise ShapeError("output_padding must be smaller than stride")
    bsz, _, h, wdt = x.shape
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wdt - 1) * stride - 2 * padding + k + output_padding
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"transpose conv output would be empty for input {x.shape}")
    w2 = w.reshape(ci, co * k * k)
    x2 = x.reshape(bsz, ci, h * wdt)
    cols = np.einsum("ic,bip->bcp", w2, x2, optimize=True)
    # The extra output_padding rows/cols receive no contributions by
    # construction, matching the adjoint of a conv that ignores them.
    y = _col2im(cols, (bsz, co, ho, wo), k, stride, padding)
    y += b[None, :, None, None]
    return y, (x, w, (bsz, co, ho, wo), stride, padding)


def conv2d_transpose_bwd(ctx, dy):
    """Gradients (dx, dw, db) of conv2d_transpose_fwd."""
    x, w, y_shape, stride, padding = ctx
    ci, co, k, _ = w.shape
    bsz, _, h, wdt = x.shape
    db = dy.sum(axis=(0, 2, 3))
    dcols, _ = _im2col(dy, k, stride, padding)
    # im2col of a gradient the size of y enumerates exactly the positions
    # col2im scattered to, so both factors below pair x with dy footprints.
    x2 = x.reshape(bsz, ci, h * wdt)
    dcols = dcols[:, :, : h * wdt]
    dw = np.einsum("bip,bcp->ic", x2, dcols, optimize=True).reshape(w.shape)
    w2 = w.reshape(ci, co * k * k)
    dx = np.einsum("ic,bcp->bip", w2, dcols, optimize=True).reshape(x.shape)
    return dx, dw, db


def batchnorm_fwd(x, gamma, beta, running_mean, running_var,
                  train: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization.

    Returns (y, ctx, running_mean, running_var); the running tensors are
    fresh arrays in train mode (unbiased update) and passed through in eval.
    """
    _check4(x, "batchnorm")
    if train:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise ShapeError("batchnorm needs more than one value per channel")
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean = (1 - momentum) * running_mean + momentum * mu
        running_var = (1 - momentum) * running_var + momentum * var * n / (n - 1)
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, gamma, inv, train), running_mean, running_var


def batchnorm_bwd(ctx, dy):
    """Gradients (dx, dgamma, dbeta) of batchnorm_fwd."""
    xhat, gamma, inv, train = ctx
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None] * inv[None, :, None, None]
    if not train:
        return dy * g, dgamma, dbeta
    n = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dx = g * (
        dy
        - dbeta[None, :, None, None] / n
        - xhat * dgamma[None, :, None, None] / n
    )
    return dx, dgamma, dbeta


def leaky_relu_fwd(x, slope: float = 0.01):
    y = np.where(x > 0, x, slope * x)
    return y, (x > 0, slope)


def leaky_relu_bwd(ctx, dy):
    pos, slope = ctx
    return np.where(pos, dy, slope * dy)


def maxpool2_fwd(x):
    """2x2 stride-2 max pooling; even spatial dims required."""
    _check4(x, "maxpool2")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {x.shape}")
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_bwd(ctx, dy):
    """Routes each gradient to its block's argmax position only."""
    idx, x_shape = ctx
    b, c, h, w = x_shape
    flat = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    return (
        flat.reshape(b, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(x_shape)
    )


def upsample2_fwd(x):
    """2x nearest-neighbor upsampling."""
    _check4(x, "upsample2")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape


def upsample2_bwd(ctx, dy):
    """Each input cell fans out to a 2x2 block, so its gradient is the sum."""
    b, c, h, w = ctx
    return dy.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))


def dense_fwd(x, w, b):
    """Affine map on (batch, features)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense weight {w.shape} incompatible with input {x.shape}")
    return x @ w + b, (x, w)


def dense_bwd(ctx, dy):
    x, w = ctx
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)

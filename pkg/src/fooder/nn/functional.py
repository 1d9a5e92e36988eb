"""Fused layer primitives with analytic backward passes.

Convolutions use an im2col view built with ``sliding_window_view`` and a
single GEMM; the backward pass scatters columns back with one strided add per
kernel tap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_out_size(size: int, kernel: int, stride: int, padding: int, output_padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xp: (N, C, Hp, Wp) -> (N, Ho, Wo, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # cols: (N, Ho, Wo, C*k*k) -> accumulate into zero array of `shape` (N, C, Hp, Wp)
    n, c = shape[:2]
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + he : stride, j : j + we : stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """``x`` (N, C, H, W), ``w`` (O, C, k, k) -> (N, O, Ho, Wo)."""
    xd, wd = x.data, w.data
    n, c, h, wid = xd.shape
    o, _, k, _ = wd.shape
    ho = conv_out_size(h, k, stride, padding)
    wo = conv_out_size(wid, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = wd.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    pshape = xp.shape

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        cflat = cols.reshape(-1, wmat.shape[1])
        gw = (gm.T @ cflat).reshape(wd.shape)
        gcols = (gm @ wmat).reshape(n, ho, wo, -1)
        gxp = _col2im(gcols, pshape, k, stride, ho, wo)
        gx = gxp[:, :, padding : padding + h, padding : padding + wid] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, back)


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """``x`` (N, Cin, H, W), ``w`` (Cin, Cout, k, k) -> (N, Cout, Ho, Wo).

    Adjoint of :func:`conv2d`: each input pixel scatters a weighted kernel into
    the (stride-spaced) output grid, which is then cropped by ``padding``.
    """
    xd, wd = x.data, w.data
    n, cin, h, wid = xd.shape
    _, cout, k, _ = wd.shape
    ho = conv_transpose_out_size(h, k, stride, padding, output_padding)
    wo = conv_transpose_out_size(wid, k, stride, padding, output_padding)
    full_h = (h - 1) * stride + k + output_padding
    full_w = (wid - 1) * stride + k + output_padding
    wmat = wd.reshape(cin, -1)  # (Cin, Cout*k*k)
    xm = xd.transpose(0, 2, 3, 1)  # (N, H, W, Cin)
    cols = xm @ wmat  # (N, H, W, Cout*k*k)
    full = _col2im(cols, (n, cout, full_h, full_w), k, stride, h, wid)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.zeros((n, cout, full_h, full_w), dtype=g.dtype)
        gfull[:, :, padding : padding + ho, padding : padding + wo] = g
        gcols = _im2col(gfull, k, stride, h, wid)  # (N, H, W, Cout*k*k)
        gx = (gcols @ wmat.T).transpose(0, 3, 1, 2)
        gw = (xm.reshape(-1, cin).T @ gcols.reshape(-1, wmat.shape[1])).reshape(wd.shape)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return np.ascontiguousarray(gx), gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, back)


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """``x`` (..., in), ``w`` (out, in)."""
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def back(g):
        gx = g @ wd
        gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, back)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over every axis except 1 (channels / features).

    In training mode the running buffers are updated in place (unbiased
    variance, torch convention).
    """
    xd = x.data
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = [1] * xd.ndim
    bshape[1] = xd.shape[1]
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = xd.size // xd.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    out = out.astype(xd.dtype, copy=False)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gd
        if training:
            m = xd.size // xd.shape[1]
            gx = (
                inv.reshape(bshape)
                / m
                * (m * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx.astype(xd.dtype, copy=False), gg, gbeta

    return Tensor._make(out, (x, gamma, beta), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    d = xd.shape[-1]

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gxhat = g * gamma.data
        gx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), back)

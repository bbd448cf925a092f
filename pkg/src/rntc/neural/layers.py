"""Numpy forward/backward kernels for the two fixed architectures.

Tensors are NCHW. Every forward returns (output, cache); the matching
backward consumes the cache.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
_TINY = np.finfo(float).tiny


def conv2d_forward(x, W, b, pad: int = 0):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    B, C, H, Wd = x.shape
    O, _, k, _ = W.shape
    Ho, Wo = H - k + 1, Wd - k + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, Ho, Wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
    out = cols @ W.reshape(O, -1).T + b
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    return out, (cols, x.shape, W, pad)


def conv2d_backward(dout, cache):
    cols, xshape, W, pad = cache
    B, C, H, Wd = xshape
    O, _, k, _ = W.shape
    Ho, Wo = H - k + 1, Wd - k + 1
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(O, -1)).reshape(B, Ho, Wo, C, k, k)
    dx = np.zeros(xshape)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx, dW, db


def maxpool2_forward(x):
    B, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    blocks = (x[:, :, :2 * H2, :2 * W2]
              .reshape(B, C, H2, 2, W2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(B, C, H2, W2, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(dout, cache):
    arg, xshape = cache
    B, C, H, W = xshape
    H2, W2 = H // 2, W // 2
    blocks = np.zeros((B, C, H2, W2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(xshape)
    dx[:, :, :2 * H2, :2 * W2] = (blocks.reshape(B, C, H2, W2, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(B, C, 2 * H2, 2 * W2))
    return dx


def activation(name: str, z):
    """Return (f(z), f'(z))."""
    if name == "sin":
        return np.sin(z), np.cos(z)
    if name == "selu":
        e = np.exp(np.minimum(z, 0.0))
        pos = z > 0
        return (np.where(pos, SELU_LAMBDA * z, SELU_LAMBDA * SELU_ALPHA * (e - 1)),
                np.where(pos, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * e))
    if name == "relu":
        pos = z > 0
        return np.where(pos, z, 0.0), pos.astype(z.dtype)
    if name == "elu1":
        # ELU(z) + 1 fused: exp(z) on the left branch, floored at the smallest
        # normal float so the residual stays > 0 after exp underflows; derivative at 0 is 1.
        e = np.exp(np.minimum(z, 0.0))
        right = z >= 0
        return np.where(right, z + 1.0, np.maximum(e, _TINY)), np.where(right, 1.0, e)
    if name == "identity":
        return z, np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")

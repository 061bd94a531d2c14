"""Hand-rolled numeric kernels for the two reconstruction networks.

Everything operates on H x W x C float32 arrays.  Semantics are pinned
precisely because a separately implemented trainer has to reproduce them:

  * conv2d: cross-correlation, zero padding of (k-1)//2 per side, output
    size ceil(H/stride); stride-2 3x3 windows are centered on even pixel
    coordinates.
  * batch/group norm: eps 1e-5, biased variance.
  * GELU: exact erf form.
  * bilinear resize: half-pixel-center mapping (align-corners false) with
    edge clamping.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

BN_EPS = 1e-5
GN_EPS = 1e-5


@dataclasses.dataclass
class ConvLayer:
    weights: np.ndarray  # [out_ch, in_ch, kh, kw]
    bias: np.ndarray  # [out_ch]
    stride: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ValueError("conv weights must be [out, in, kh, kw]")
        kh, kw = self.weights.shape[2:]
        if kh not in (1, 3) or kw not in (1, 3):
            raise ValueError(f"kernel size {kh}x{kw} unsupported (1 or 3)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must match out channels")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Same-padded cross-correlation via im2col + matmul."""
    x = np.asarray(x, dtype=np.float32)
    out_ch, in_ch, kh, kw = layer.weights.shape
    if x.ndim != 3 or x.shape[2] != in_ch:
        raise ValueError(
            f"input has {x.shape[2] if x.ndim == 3 else '?'} channels, "
            f"layer expects {in_ch}"
        )
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    windows = sliding_window_view(padded, (kh, kw), axis=(0, 1))
    windows = windows[::layer.stride, ::layer.stride]
    ho, wo = windows.shape[:2]
    cols = windows.reshape(ho * wo, in_ch * kh * kw)
    flat = layer.weights.transpose(1, 2, 3, 0).reshape(in_ch * kh * kw, out_ch)
    out = cols @ flat + layer.bias
    return out.reshape(ho, wo, out_ch).astype(np.float32)


def batch_norm(x, gamma, beta, mean, var, eps=BN_EPS):
    scale = gamma / np.sqrt(var + eps)
    return ((x - mean) * scale + beta).astype(np.float32)


def group_norm(x, gamma, beta, groups=8, eps=GN_EPS):
    h, w, c = x.shape
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    g = x.reshape(h, w, groups, c // groups)
    mean = g.mean(axis=(0, 1, 3), keepdims=True)
    var = g.var(axis=(0, 1, 3), keepdims=True)
    normed = ((g - mean) / np.sqrt(var + eps)).reshape(h, w, c)
    return (normed * gamma + beta).astype(np.float32)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(np.float32)


def gelu(x):
    x64 = np.asarray(x, dtype=np.float64)
    return (0.5 * x64 * (1.0 + erf(x64 / np.sqrt(2.0)))).astype(np.float32)


def softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def avg_pool(x, k):
    h, w, c = x.shape
    if h % k or w % k:
        raise ValueError(f"{h}x{w} not divisible by pool size {k}")
    return x.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3)).astype(np.float32)


def bilinear_resize(x, out_h, out_w):
    """Half-pixel-center bilinear resampling with edge clamping."""
    h, w, _ = x.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    top = x[y0][:, x0] * (1 - wx) + x[y0][:, x1] * wx
    bottom = x[y1][:, x0] * (1 - wx) + x[y1][:, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)

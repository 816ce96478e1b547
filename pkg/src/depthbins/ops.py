"""Dense numerical kernels: convolution, bilinear sampling, activations."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .types import ValidationError


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           padding: str = "zeros") -> np.ndarray:
    """Stride-1 "same" cross-correlation.

    x: (C_in, H, W); weight: (C_out, C_in, kh, kw) with odd kh, kw.
    ``padding`` is "zeros" or "edge" (replicate border pixels).
    """
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in:
        raise ValidationError(
            f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}", "shape-mismatch"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"conv2d: kernel size must be odd, got {kh}x{kw}", "shape-mismatch")
    ph, pw = kh // 2, kw // 2
    mode = {"zeros": "constant", "edge": "edge"}[padding]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode=mode)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # C_in, H, W, kh, kw
    out = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out += bias[:, None, None]
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def bilinear_sample(img: np.ndarray, py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Sample a (C, H, W) image at fractional positions (py, px).

    Each of the four neighbouring integer taps contributes only when it lies
    inside the image, so out-of-image samples read as zero.
    Returns an array of shape (C, *py.shape).
    """
    c, h, w = img.shape
    y0 = np.floor(py)
    x0 = np.floor(px)
    fy = py - y0
    fx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    out = np.zeros((c, *py.shape))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(inside, wy * wx, 0.0) * vals
    return out

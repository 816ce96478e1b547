"""
Synthetic low-resolution input generation.

LR depth is produced by bicubic resampling of GT, optionally followed by a
Gaussian blur and additive Gaussian noise at LR resolution (the noisy
setting uses blur sigma 3.6 and noise sigma 0.07).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import DepthMap, FeatureMap, ValidationError

CUBIC_A = -0.5

NOISY_BLUR_SIGMA = 3.6
NOISY_NOISE_SIGMA = 0.07


@dataclass(frozen=True)
class DegradeSpec:
    scale: float = 4.0
    blur_sigma: float = 0.0
    noise_mean: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"scale must be > 0, got {self.scale}", "invalid-scale")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValidationError("blur and noise sigmas must be >= 0", "invalid-sigma")


def cubic_kernel(x, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) cubic interpolation matrix, half-pixel centers, clamped edges."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = base + tap
        w = cubic_kernel(src - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), w)
    return mat


def fill_invalid(depth: DepthMap) -> np.ndarray:
    if depth.mask.all():
        return depth.values
    valid = depth.valid_values()
    fill = valid.mean() if valid.size else 0.0
    return np.where(depth.mask, depth.values, fill)


def _nearest_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return mask[np.ix_(ys, xs)]


def resample_grid(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of a 2-D array (no clamping)."""
    h, w = grid.shape
    return resample_matrix(h, out_h) @ grid @ resample_matrix(w, out_w).T


def bicubic_resample(depth: DepthMap, out_h: int, out_w: int) -> DepthMap:
    """Bicubic resize of a depth map.

    Invalid pixels are filled with the valid mean before filtering and the
    mask is resized by nearest neighbour. Overshoot below zero is clamped.
    """
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output size must be >= 1, got {out_h}x{out_w}", "degenerate-size")
    out = resample_grid(fill_invalid(depth), out_h, out_w)
    mask = _nearest_mask(depth.mask, out_h, out_w)
    return DepthMap(np.maximum(out, 0.0), mask)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_matrix(n: int, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for t, wt in enumerate(kernel):
        np.add.at(mat, (rows, np.clip(rows + t - r, 0, n - 1)), wt)
    return mat


def gaussian_blur(depth: DepthMap, sigma: float) -> DepthMap:
    """Separable Gaussian blur, radius ceil(3 sigma), clamped edges."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}", "invalid-sigma")
    if sigma == 0:
        return depth
    k = gaussian_kernel(sigma)
    h, w = depth.shape
    out = _blur_matrix(h, k) @ fill_invalid(depth) @ _blur_matrix(w, k).T
    return DepthMap(out, depth.mask)


def gaussian_noise(shape, mean: float, sigma: float, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(mean, sigma, size=shape)


def add_gaussian_noise(depth: DepthMap, mean: float, sigma: float, seed: int) -> DepthMap:
    """Add seeded i.i.d. normal noise, then clamp at zero."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}", "invalid-sigma")
    if sigma == 0:
        noisy = depth.values + mean
    else:
        noisy = depth.values + gaussian_noise(depth.shape, mean, sigma, seed)
    return DepthMap(np.maximum(noisy, 0.0), depth.mask)


def lr_size(h: int, w: int, scale: float) -> tuple[int, int]:
    # round half up; Python's round() is banker's rounding
    return math.floor(h / scale + 0.5), math.floor(w / scale + 0.5)


def make_lr(gt: DepthMap, spec: DegradeSpec) -> DepthMap:
    out_h, out_w = lr_size(gt.height, gt.width, spec.scale)
    if out_h < 1 or out_w < 1:
        raise ValidationError(
            f"scale {spec.scale} reduces {gt.shape} to {out_h}x{out_w}", "degenerate-size"
        )
    lr = gt if (out_h, out_w) == gt.shape else bicubic_resample(gt, out_h, out_w)
    if spec.blur_sigma > 0:
        lr = gaussian_blur(lr, spec.blur_sigma)
    if spec.noise_sigma > 0 or spec.noise_mean != 0:
        lr = add_gaussian_noise(lr, spec.noise_mean, spec.noise_sigma, spec.seed)
    return lr


def synthetic_scene(height: int, width: int, seed: int = 0) -> tuple[DepthMap, FeatureMap]:
    """Piecewise-planar depth (cm) with boxes, and a color image loosely tied to it."""
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    gx, gy = rng.uniform(-60, 60, size=2)
    depth = 200.0 + gx * xs + gy * ys
    for _ in range(3):
        y0, x0 = rng.integers(0, height // 2), rng.integers(0, width // 2)
        bh, bw = rng.integers(height // 8 + 1, height // 2), rng.integers(width // 8 + 1, width // 2)
        depth[y0:y0 + bh, x0:x0 + bw] -= rng.uniform(20, 80)
    depth = np.maximum(depth, 10.0)

    norm = (depth - depth.min()) / max(np.ptp(depth), 1e-12)
    color = np.stack([
        norm,
        0.5 + 0.5 * np.sin(6 * np.pi * xs) * (1 - norm),
        rng.uniform(0, 1) * (1 - norm) + 0.1 * ys,
    ])
    color = np.clip(color + rng.normal(0, 0.02, size=color.shape), 0.0, 1.0)
    return DepthMap(depth), FeatureMap(color)

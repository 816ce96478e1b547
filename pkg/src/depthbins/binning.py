"""Bin decomposition of depth and degradation-driven bin range adjustment."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .types import (
    BinIndexMap,
    BinPartition,
    CandidateVolume,
    DegradationMap,
    DepthMap,
    LocalStats,
    ProbabilityVolume,
    ValidationError,
    check_same_shape,
)


def partition_uniform(source, n_bins: int) -> BinPartition:
    """Split a depth range uniformly into ``n_bins`` bins.

    ``source`` is either a DepthMap, whose image-wide valid [min, max] is
    broadcast to every pixel (stage-1 initialization), or a ``(v_min, v_max)``
    pair of per-pixel arrays.
    """
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValidationError(f"n_bins must be a positive integer, got {n_bins}", "invalid-n-bins")
    if isinstance(source, DepthMap):
        valid = source.valid_values()
        if valid.size == 0:
            raise ValidationError("depth map has no valid pixels", "no-valid-pixels")
        v_min = np.full(source.shape, valid.min())
        v_max = np.full(source.shape, valid.max())
    else:
        v_min, v_max = (np.asarray(a, dtype=np.float64) for a in source)
        v_min, v_max = np.broadcast_arrays(v_min, v_max)
    return BinPartition(int(n_bins), v_min, v_max)


def bin_centers(partition: BinPartition) -> CandidateVolume:
    edges = partition.edges
    return CandidateVolume((edges[:-1] + edges[1:]) / 2)


def combine(centers: CandidateVolume, probs: ProbabilityVolume) -> DepthMap:
    """Probability-weighted sum of bin centers at every pixel."""
    check_same_shape(centers.centers.shape, probs.probs.shape, "combine")
    return DepthMap(np.einsum("nhw,nhw->hw", centers.centers, probs.probs))


def locate_target_bin(partition: BinPartition, depth: DepthMap) -> BinIndexMap:
    """Index of the bin whose edges enclose ``depth`` at each pixel.

    A depth sitting on an interior edge goes to the higher bin; v_max goes
    to the last bin. Depths outside the range are clamped and counted.
    Zero-width ranges always map to bin 0.
    """
    check_same_shape(partition.shape, depth.shape, "locate_target_bin")
    n = partition.n_bins
    d = depth.values
    lo, hi = partition.v_min, partition.v_max
    outside = depth.mask & ((d < lo) | (d > hi))
    d = np.clip(np.where(depth.mask, d, lo), lo, hi)

    edges = partition.edges
    # count interior edges u_1..u_{N-1} that are <= d
    idx = (edges[1:-1] <= d[None]).sum(axis=0)
    idx = np.where(hi > lo, idx, 0)
    return BinIndexMap(np.minimum(idx, n - 1), n, int(outside.sum()))


def _windows(grid: np.ndarray, k: int) -> np.ndarray:
    """k x k windows around each pixel; positions outside the image are NaN."""
    r = k // 2
    padded = np.pad(grid, r, mode="constant", constant_values=np.nan)
    return sliding_window_view(padded, (k, k))


def truncated_box_mean(grid: np.ndarray, k: int) -> np.ndarray:
    """Mean over the in-image (and non-NaN) part of each k x k window; 0 where empty."""
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"window size must be odd and >= 1, got {k}", "invalid-window")
    win = _windows(np.asarray(grid, dtype=np.float64), k)
    count = np.sum(~np.isnan(win), axis=(-2, -1))
    total = np.nansum(win, axis=(-2, -1))
    return np.where(count > 0, total / np.maximum(count, 1), 0.0)


def local_variance(deg: DegradationMap, k: int) -> LocalStats:
    """Population mean and variance of the degradation over k x k neighborhoods.

    Border windows are truncated to the pixels inside the image.
    """
    if k < 1 or k % 2 == 0:
        raise ValidationError(f"neighborhood size must be odd and >= 1, got {k}", "invalid-window")
    win = _windows(deg.values, k)
    count = np.sum(~np.isnan(win), axis=(-2, -1))
    mean = np.nansum(win, axis=(-2, -1)) / count
    var = np.nansum((win - mean[..., None, None]) ** 2, axis=(-2, -1)) / count
    return LocalStats(mean, var)


def adjust_range(
    partition: BinPartition, target: BinIndexMap, sigma: np.ndarray, gamma: float
) -> BinPartition:
    """Widen each pixel's target bin by gamma * sigma on both sides.

    The lower bound is clamped at zero. The bin count is kept.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    check_same_shape(partition.shape, target.indices.shape, "adjust_range target")
    check_same_shape(partition.shape, sigma.shape, "adjust_range sigma")
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}", "invalid-gamma")
    edges = partition.edges
    idx = target.indices[None]
    lower = np.take_along_axis(edges, idx, axis=0)[0]
    upper = np.take_along_axis(edges, idx + 1, axis=0)[0]
    margin = gamma * sigma
    v_min = np.maximum(lower - margin, 0.0)
    v_max = np.maximum(upper + margin, v_min)
    return BinPartition(partition.n_bins, v_min, v_max)

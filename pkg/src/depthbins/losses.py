"""Training objective: masked L1 reconstruction plus a Chamfer bin regularizer."""

from __future__ import annotations

import numpy as np

from .types import CandidateVolume, DepthMap, HyperParams, ValidationError, check_same_shape

MAX_CANDIDATES = 4096


def joint_mask(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    check_same_shape(pred.shape, gt.shape, "prediction vs ground truth")
    mask = pred.mask & gt.mask
    if not mask.any():
        raise ValidationError("no valid pixels shared by prediction and ground truth", "no-valid-pixels")
    return mask


def l1_rec(pred: DepthMap, gt: DepthMap) -> float:
    mask = joint_mask(pred, gt)
    return float(np.mean(np.abs(pred.values[mask] - gt.values[mask])))


def _nearest_sq(queries: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Squared distance from each query to its nearest value in ``ref`` (1-D)."""
    ref = np.sort(ref)
    pos = np.searchsorted(ref, queries)
    lo = ref[np.clip(pos - 1, 0, len(ref) - 1)]
    hi = ref[np.clip(pos, 0, len(ref) - 1)]
    return np.minimum((queries - lo) ** 2, (queries - hi) ** 2)


def chamfer_bins(candidates, gt_values) -> float:
    """Bi-directional squared Chamfer distance between two 1-D sets.

    Each element is counted once per occurrence.
    """
    c = np.asarray(candidates, dtype=np.float64).ravel()
    z = np.asarray(gt_values, dtype=np.float64).ravel()
    if c.size == 0 or z.size == 0:
        raise ValidationError("chamfer_bins needs two non-empty sets", "empty-set")
    return float(_nearest_sq(z, c).sum() + _nearest_sq(c, z).sum())


def chamfer_bins_batch(pairs) -> float:
    """Mean of per-image Chamfer losses over (candidates, gt_values) pairs."""
    losses = [chamfer_bins(c, z) for c, z in pairs]
    if not losses:
        raise ValidationError("empty batch", "empty-set")
    return float(np.mean(losses))


def candidate_set(centers: CandidateVolume, max_size: int = MAX_CANDIDATES, seed: int = 0) -> np.ndarray:
    """Distinct bin centers of one image, uniformly subsampled (seeded) to ``max_size``."""
    values = np.unique(centers.centers)
    if values.size > max_size:
        rng = np.random.default_rng(seed)
        values = np.sort(rng.choice(values, size=max_size, replace=False))
    return values


def total_loss(pred: DepthMap, gt: DepthMap, centers, hp: HyperParams) -> float:
    """L1 reconstruction + alpha * Chamfer(bin centers, valid GT depths).

    ``centers`` is a CandidateVolume or an explicit 1-D candidate set.
    """
    rec = l1_rec(pred, gt)
    cset = candidate_set(centers, seed=hp.seed) if isinstance(centers, CandidateVolume) else centers
    return rec + hp.alpha * chamfer_bins(cset, gt.valid_values())

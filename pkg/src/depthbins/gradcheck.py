"""
Analytic gradient of the L1 reconstruction loss with respect to the bin
logits, and a central finite-difference checker.

Path: logits -> softmax -> weighted sum of centers -> masked mean |X - Z|.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .ops import softmax
from .types import CandidateVolume, DDBError, DepthMap, ValidationError, check_same_shape

KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class GradReport:
    max_rel_error: float
    max_abs_error: float
    n_params_checked: int
    step: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def combine_l1_loss(logits: np.ndarray, centers: CandidateVolume, gt: DepthMap) -> float:
    p = softmax(logits, axis=0)
    x = np.einsum("nhw,nhw->hw", centers.centers, p)
    return float(np.mean(np.abs(x - gt.values)[gt.mask]))


def grad_combine_l1(logits: np.ndarray, centers: CandidateVolume, gt: DepthMap) -> np.ndarray:
    """dL/dlogits for L = mean over valid pixels of |sum_n C_n softmax(logits)_n - Z|.

    sign(0) is taken as 0, so pixels exactly on the kink get zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    check_same_shape(logits.shape, centers.centers.shape, "grad_combine_l1 logits")
    check_same_shape(logits.shape[1:], gt.shape, "grad_combine_l1 gt")
    m = int(gt.mask.sum())
    if m == 0:
        raise ValidationError("no valid pixels", "no-valid-pixels")
    p = softmax(logits, axis=0)
    c = centers.centers
    x = np.einsum("nhw,nhw->hw", c, p)
    s = np.where(gt.mask, np.sign(x - gt.values), 0.0)
    return (s / m)[None] * p * (c - x[None])


def finite_diff_check(f: Callable[[np.ndarray], float], analytic: np.ndarray,
                      params: np.ndarray, step: float) -> GradReport:
    """Compare ``analytic`` with central differences of ``f`` at ``params``.

    Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
    """
    if not step > 0:
        raise ValidationError(f"step must be > 0, got {step}", "invalid-step")
    params = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    check_same_shape(analytic.shape, params.shape, "finite_diff_check")
    numeric = np.empty_like(params)
    flat = params.reshape(-1)
    out = numeric.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        f_plus = f(params)
        flat[j] = orig - step
        f_minus = f(params)
        flat[j] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DDBError(f"non-finite function value at coordinate {j}", "non-finite-value")
        out[j] = (f_plus - f_minus) / (2 * step)
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return GradReport(
        max_rel_error=float((abs_err / denom).max(initial=0.0)),
        max_abs_error=float(abs_err.max(initial=0.0)),
        n_params_checked=int(params.size),
        step=float(step),
    )


def random_instance(rng: np.random.Generator, n_bins: int = 4, shape=(3, 3)):
    """Random (logits, centers, gt) with every pixel at least KINK_MARGIN off the L1 kink."""
    h, w = shape
    logits = rng.normal(size=(n_bins, h, w))
    base = rng.uniform(1.0, 5.0, size=(h, w))
    steps = rng.uniform(0.1, 1.0, size=(n_bins, h, w))
    centers = CandidateVolume(base[None] + np.cumsum(steps, axis=0))
    x = np.einsum("nhw,nhw->hw", centers.centers, softmax(logits, axis=0))
    offset = rng.uniform(KINK_MARGIN, 1.0, size=(h, w)) * rng.choice([-1.0, 1.0], size=(h, w))
    gt = DepthMap(np.maximum(x + offset, 0.0))
    return logits, centers, gt


def run_trials(trials: int = 100, step: float = 1e-4, seed: int = 0) -> GradReport:
    """Check grad_combine_l1 on ``trials`` seeded random instances; report the worst errors."""
    rng = np.random.default_rng(seed)
    worst_rel = worst_abs = 0.0
    n = 0
    for _ in range(trials):
        logits, centers, gt = random_instance(rng)
        rep = finite_diff_check(
            lambda th: combine_l1_loss(th, centers, gt),
            grad_combine_l1(logits, centers, gt),
            logits,
            step,
        )
        worst_rel = max(worst_rel, rep.max_rel_error)
        worst_abs = max(worst_abs, rep.max_abs_error)
        n += rep.n_params_checked
    return GradReport(worst_rel, worst_abs, n, step)

"""
Value types shared by the whole package.

Every type is a frozen dataclass wrapping float64 (or bool/int) numpy
arrays. Arrays are copied on construction and marked read-only, so a value
can be shared between threads without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

PROB_TOL = 1e-9


class DDBError(Exception):
    """Base class for all package errors. ``kind`` is a short machine tag."""

    kind = "error"

    def __init__(self, message: str, kind: str | None = None):
        super().__init__(message)
        if kind is not None:
            self.kind = kind


class ValidationError(DDBError, ValueError):
    kind = "validation"


class FormatError(DDBError):
    """Raised by file readers on malformed input."""

    kind = "format"


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _first_bad(bad: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(bad)[0])


def _check_grid(values: np.ndarray, ndim: int, name: str) -> None:
    if values.ndim != ndim:
        raise ValidationError(
            f"{name}: expected a {ndim}-d array, got shape {values.shape}", "shape-mismatch"
        )
    if ndim >= 2 and (values.shape[-1] < 1 or values.shape[-2] < 1):
        raise ValidationError(f"{name}: empty spatial grid {values.shape}", "shape-mismatch")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """H x W depth grid in centimeters plus a validity mask.

    Values at invalid pixels are carried through untouched and never
    enter a reduction.
    """

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        mask = np.ones(values.shape, bool) if self.mask is None else np.asarray(self.mask)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", _frozen(mask, bool))
        validate(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_values(self) -> np.ndarray:
        return self.values[self.mask]

    def with_values(self, values) -> DepthMap:
        return DepthMap(values, self.mask)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        validate(self)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.values.shape[1:]


@dataclass(frozen=True, eq=False)
class DegradationMap:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        validate(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class BinPartition:
    """Per-pixel depth interval [v_min, v_max] split into ``n_bins`` equal bins."""

    n_bins: int
    v_min: np.ndarray
    v_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_min", _frozen(self.v_min, np.float64))
        object.__setattr__(self, "v_max", _frozen(self.v_max, np.float64))
        validate(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v_min.shape

    @property
    def width(self) -> np.ndarray:
        return (self.v_max - self.v_min) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        """(N+1) x H x W bin edges; the last edge is pinned to v_max."""
        n = np.arange(self.n_bins + 1, dtype=np.float64)[:, None, None]
        edges = self.v_min[None] + n * self.width[None]
        edges[-1] = self.v_max
        return edges


@dataclass(frozen=True, eq=False)
class CandidateVolume:
    centers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen(self.centers, np.float64))
        validate(self)

    @property
    def n_bins(self) -> int:
        return self.centers.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.centers.shape[1:]


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, np.float64))
        validate(self)

    @property
    def n_bins(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]

    @classmethod
    def uniform(cls, n_bins: int, shape: tuple[int, int]) -> ProbabilityVolume:
        return cls(np.full((n_bins, *shape), 1.0 / n_bins))


@dataclass(frozen=True, eq=False)
class BinIndexMap:
    """Target-bin index per pixel. ``n_clamped`` counts out-of-range depths."""

    indices: np.ndarray
    n_bins: int
    n_clamped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))
        validate(self)


@dataclass(frozen=True)
class HyperParams:
    n_bins: int = 32
    n_stages: int = 4
    gamma: float = 0.2
    neighborhood_k: int = 3
    alpha: float = 0.1
    hidden_channels: int = 64
    seed: int = 0

    def __post_init__(self):
        validate(self)


@dataclass(frozen=True, eq=False)
class LocalStats:
    mean: np.ndarray
    variance: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean, np.float64))
        object.__setattr__(self, "variance", _frozen(self.variance, np.float64))
        sigma = np.sqrt(self.variance) if self.sigma is None else self.sigma
        object.__setattr__(self, "sigma", _frozen(sigma, np.float64))
        if np.any(self.variance < 0):
            raise ValidationError("negative local variance", "negative-variance")


Validatable = Union[
    DepthMap, FeatureMap, DegradationMap, BinPartition, CandidateVolume,
    ProbabilityVolume, BinIndexMap, HyperParams,
]


def validate(obj: Validatable) -> None:
    """Check the invariants of ``obj``; raise ValidationError on the first violation.

    Error messages name the first offending pixel in (row-major) index order.
    """
    if isinstance(obj, DepthMap):
        _check_grid(obj.values, 2, "DepthMap")
        if obj.mask.shape != obj.values.shape:
            raise ValidationError(
                f"DepthMap: mask shape {obj.mask.shape} != values shape {obj.values.shape}",
                "shape-mismatch",
            )
        v = obj.values
        bad = obj.mask & ~np.isfinite(v)
        if bad.any():
            raise ValidationError(f"DepthMap: non-finite value at {_first_bad(bad)}", "non-finite-value")
        bad = obj.mask & (v < 0)
        if bad.any():
            raise ValidationError(f"DepthMap: negative depth at {_first_bad(bad)}", "negative-depth")
    elif isinstance(obj, FeatureMap):
        _check_grid(obj.values, 3, "FeatureMap")
        bad = ~np.isfinite(obj.values)
        if bad.any():
            raise ValidationError(f"FeatureMap: non-finite value at {_first_bad(bad)}", "non-finite-value")
    elif isinstance(obj, DegradationMap):
        _check_grid(obj.values, 2, "DegradationMap")
        bad = ~np.isfinite(obj.values)
        if bad.any():
            raise ValidationError(
                f"DegradationMap: non-finite value at {_first_bad(bad)}", "non-finite-value"
            )
        bad = obj.values < 0
        if bad.any():
            raise ValidationError(
                f"DegradationMap: negative value at {_first_bad(bad)}", "negative-degradation"
            )
    elif isinstance(obj, BinPartition):
        if int(obj.n_bins) != obj.n_bins or obj.n_bins < 1:
            raise ValidationError(f"BinPartition: invalid n_bins {obj.n_bins}", "invalid-n-bins")
        _check_grid(obj.v_min, 2, "BinPartition.v_min")
        if obj.v_min.shape != obj.v_max.shape:
            raise ValidationError(
                f"BinPartition: v_min shape {obj.v_min.shape} != v_max shape {obj.v_max.shape}",
                "shape-mismatch",
            )
        bad = ~(np.isfinite(obj.v_min) & np.isfinite(obj.v_max))
        if bad.any():
            raise ValidationError(f"BinPartition: non-finite range at {_first_bad(bad)}", "non-finite-value")
        bad = obj.v_min > obj.v_max
        if bad.any():
            raise ValidationError(f"BinPartition: v_min > v_max at {_first_bad(bad)}", "inverted-range")
    elif isinstance(obj, CandidateVolume):
        _check_grid(obj.centers, 3, "CandidateVolume")
        bad = ~np.isfinite(obj.centers)
        if bad.any():
            raise ValidationError(
                f"CandidateVolume: non-finite value at {_first_bad(bad)}", "non-finite-value"
            )
        bad = np.diff(obj.centers, axis=0) < 0
        if bad.any():
            raise ValidationError(
                f"CandidateVolume: decreasing centers at {_first_bad(bad)}", "non-monotone-centers"
            )
    elif isinstance(obj, ProbabilityVolume):
        _check_grid(obj.probs, 3, "ProbabilityVolume")
        p = obj.probs
        bad = ~np.isfinite(p)
        if bad.any():
            raise ValidationError(
                f"ProbabilityVolume: non-finite value at {_first_bad(bad)}", "non-finite-value"
            )
        bad = p < 0
        if bad.any():
            raise ValidationError(
                f"ProbabilityVolume: negative probability at {_first_bad(bad)}", "negative-probability"
            )
        bad = np.abs(p.sum(axis=0) - 1.0) > PROB_TOL
        if bad.any():
            pix = _first_bad(bad)
            raise ValidationError(
                f"ProbabilityVolume: probabilities at pixel {pix} sum to {p.sum(axis=0)[pix]!r}",
                "unnormalized-probability",
            )
    elif isinstance(obj, BinIndexMap):
        _check_grid(obj.indices, 2, "BinIndexMap")
        bad = (obj.indices < 0) | (obj.indices >= obj.n_bins)
        if bad.any():
            raise ValidationError(f"BinIndexMap: index out of range at {_first_bad(bad)}", "index-out-of-range")
    elif isinstance(obj, HyperParams):
        if obj.n_bins < 1 or obj.n_stages < 1 or obj.hidden_channels < 1:
            raise ValidationError(f"HyperParams: counts must be >= 1: {obj}", "invalid-hyperparams")
        if obj.gamma < 0 or obj.alpha < 0:
            raise ValidationError(f"HyperParams: gamma and alpha must be >= 0: {obj}", "invalid-hyperparams")
        if obj.neighborhood_k < 1 or obj.neighborhood_k % 2 == 0:
            raise ValidationError(
                f"HyperParams: neighborhood_k must be odd and >= 1, got {obj.neighborhood_k}",
                "invalid-hyperparams",
            )
    else:
        raise TypeError(f"cannot validate {type(obj).__name__}")


def check_same_shape(a: tuple, b: tuple, what: str) -> None:
    if tuple(a) != tuple(b):
        raise ValidationError(f"{what}: shape {tuple(a)} does not match {tuple(b)}", "shape-mismatch")

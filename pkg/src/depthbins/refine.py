"""
Multi-stage coarse-to-fine depth refinement.

Each stage bins the current estimate, narrows the range to the target bin
widened by local degradation spread, predicts probabilities over the new
candidates and emits the residual between their weighted combination and
the current estimate. Stage outputs chain into the next stage.

The feature backbone and degradation estimator are pluggable; the
providers defined here are small deterministic stand-ins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import binning, probhead
from .binning import truncated_box_mean
from .degrade import bicubic_resample, fill_invalid
from .ops import conv2d, relu
from .probhead import ProbHeadWeights
from .types import (
    BinPartition,
    CandidateVolume,
    DegradationMap,
    DepthMap,
    FeatureMap,
    HyperParams,
    ProbabilityVolume,
    ValidationError,
    check_same_shape,
)

DEGRADATION_EPS = 1e-8

# (centers, partition) -> probabilities; replaces the learned head in tests
ProbSource = Callable[[CandidateVolume, BinPartition], ProbabilityVolume]


class FeatureProvider(Protocol):
    def produce(self, color: FeatureMap, lr_depth: DepthMap
                ) -> tuple[FeatureMap, list[FeatureMap], DepthMap]:
        """Return (context, four layer features, initial HR depth) on the color grid."""


class DegradationProvider(Protocol):
    def estimate(self, coarse: DepthMap, reference: DepthMap) -> DegradationMap:
        ...


@dataclass(frozen=True, eq=False)
class StageInputs:
    coarse: DepthMap
    layer_feat: FeatureMap
    degradation: DegradationMap
    context: FeatureMap

    def __post_init__(self):
        shape = self.coarse.shape
        check_same_shape(self.layer_feat.spatial_shape, shape, "StageInputs layer_feat")
        check_same_shape(self.degradation.shape, shape, "StageInputs degradation")
        check_same_shape(self.context.spatial_shape, shape, "StageInputs context")


@dataclass
class RefineTrace:
    per_stage_depths: list[DepthMap] = field(default_factory=list)
    per_stage_partitions: list[BinPartition] = field(default_factory=list)
    per_stage_probs: list[ProbabilityVolume] = field(default_factory=list)


def upsample_to(depth: DepthMap, shape: tuple[int, int]) -> DepthMap:
    if depth.shape == tuple(shape):
        return depth
    return bicubic_resample(depth, *shape)


def _network_probs(inputs: StageInputs, centers: CandidateVolume,
                   weights: ProbHeadWeights) -> ProbabilityVolume:
    projected = probhead.project_candidates(centers, weights)
    q = probhead.build_gru_input(projected, inputs.context, inputs.layer_feat)
    ctx = probhead.build_gru_input(inputs.context, inputs.layer_feat)
    h0 = probhead.init_hidden(ctx, weights)
    h = probhead.deform_modulate(h0, inputs.degradation, weights)
    h = probhead.conv_gru_step(q, h, weights)
    return probhead.probability_head(h, weights)


def ddb_stage(inputs: StageInputs, partition: BinPartition, weights: ProbHeadWeights | None,
              hp: HyperParams, probs: ProbabilityVolume | None = None,
              prob_source: ProbSource | None = None
              ) -> tuple[DepthMap, BinPartition, ProbabilityVolume]:
    """One degradation-driven binning stage.

    ``probs`` are the current probabilities over ``partition``; their
    combination locates the target bin. Without them the source (if any) is
    queried on ``partition``, otherwise the coarse depth itself is located.
    ``prob_source`` replaces the learned head for both queries.

    Returns (next depth, adjusted partition, new probabilities).
    """
    x = inputs.coarse
    check_same_shape(partition.shape, x.shape, "ddb_stage partition")
    if partition.n_bins != hp.n_bins:
        raise ValidationError(
            f"partition has {partition.n_bins} bins, hyperparameters say {hp.n_bins}", "shape-mismatch"
        )

    centers = binning.bin_centers(partition)
    if probs is None and prob_source is not None:
        probs = prob_source(centers, partition)
    estimate = x if probs is None else binning.combine(centers, probs)
    target = binning.locate_target_bin(partition, estimate)

    stats = binning.local_variance(inputs.degradation, hp.neighborhood_k)
    adjusted = binning.adjust_range(partition, target, stats.sigma, hp.gamma)
    new_centers = binning.bin_centers(adjusted)

    if prob_source is not None:
        new_probs = prob_source(new_centers, adjusted)
    else:
        if weights is None:
            raise ValidationError("ddb_stage needs weights or a probability source", "missing-weights")
        new_probs = _network_probs(inputs, new_centers, weights)

    combined = binning.combine(new_centers, new_probs).values
    residual = combined - x.values
    out = np.maximum(x.values + residual, 0.0)
    return DepthMap(out, x.mask), adjusted, new_probs


def refine_multistage(color: FeatureMap, lr_depth: DepthMap, fp: FeatureProvider,
                      dp: DegradationProvider, weights: Sequence[ProbHeadWeights] | None,
                      hp: HyperParams, reference: DepthMap | None = None,
                      prob_source: ProbSource | None = None) -> tuple[DepthMap, RefineTrace]:
    """Run ``hp.n_stages`` chained stages and return the final depth and a trace.

    ``reference`` is the degradation reference; by default the provider's
    initial estimate. Pass a previous final output when iterating.
    """
    if prob_source is None:
        if weights is None or len(weights) != hp.n_stages:
            n = 0 if weights is None else len(weights)
            raise ValidationError(
                f"need {hp.n_stages} per-stage weight sets, got {n}", "shape-mismatch"
            )
    context, layer_feats, initial = fp.produce(color, lr_depth)
    if not layer_feats:
        raise ValidationError("feature provider returned no layer features", "provider-failure")
    hr_shape = color.spatial_shape
    x = upsample_to(lr_depth, hr_shape)
    x = DepthMap(fill_invalid(x), x.mask)
    check_same_shape(context.spatial_shape, hr_shape, "provider context")
    check_same_shape(initial.shape, hr_shape, "provider initial depth")
    ref = initial if reference is None else reference

    partition = binning.partition_uniform(x, hp.n_bins)
    probs = None
    trace = RefineTrace()
    for i in range(hp.n_stages):
        deg = dp.estimate(x, ref)
        inputs = StageInputs(x, layer_feats[min(i, len(layer_feats) - 1)], deg, context)
        w = None if weights is None else weights[i]
        x, partition, probs = ddb_stage(inputs, partition, w, hp, probs, prob_source)
        trace.per_stage_depths.append(x)
        trace.per_stage_partitions.append(partition)
        trace.per_stage_probs.append(probs)
    return x, trace


def init_stage_weights(hp: HyperParams, context_channels: int) -> list[ProbHeadWeights]:
    """Independent seeded weights for every stage."""
    return [
        probhead.init_weights(hp.n_bins, hp.hidden_channels, context_channels, hp.seed + 1000 * (i + 1))
        for i in range(hp.n_stages)
    ]


def one_hot_oracle(gt: DepthMap) -> ProbSource:
    """Probability source that puts all mass on the bin containing GT."""

    def source(centers: CandidateVolume, partition: BinPartition) -> ProbabilityVolume:
        idx = binning.locate_target_bin(partition, gt).indices
        p = np.zeros(centers.centers.shape)
        np.put_along_axis(p, idx[None], 1.0, axis=0)
        return ProbabilityVolume(p)

    return source


def uniform_source(centers: CandidateVolume, partition: BinPartition) -> ProbabilityVolume:
    return ProbabilityVolume.uniform(centers.n_bins, centers.shape)


class SmallEncoderProvider:
    """Deterministic four-layer conv+ReLU encoder over [color; normalized depth].

    The layer outputs are the four layer features; a 1x1 conv+ReLU over
    their concatenation is the fused context. Borders use edge padding so
    constant inputs give spatially constant features.
    """

    def __init__(self, seed: int = 0, channels: int = 16):
        if channels < 1:
            raise ValidationError(f"channels must be >= 1, got {channels}", "invalid-channels")
        self.seed = seed
        self.channels = channels
        rng = np.random.default_rng(seed)
        self.layers = []
        c_in = 4
        for _ in range(4):
            bound = 1.0 / np.sqrt(c_in * 9)
            self.layers.append((rng.uniform(-bound, bound, (channels, c_in, 3, 3)),
                                rng.uniform(-bound, bound, channels)))
            c_in = channels
        bound = 1.0 / np.sqrt(4 * channels)
        self.fuse = (rng.uniform(-bound, bound, (channels, 4 * channels, 1, 1)),
                     rng.uniform(-bound, bound, channels))

    @property
    def context_channels(self) -> int:
        """Channels of context plus one layer feature, as seen by the probability head."""
        return 2 * self.channels

    def produce(self, color: FeatureMap, lr_depth: DepthMap):
        if color.channels != 3:
            raise ValidationError(f"color image must have 3 channels, got {color.channels}",
                                  "shape-mismatch")
        up = upsample_to(lr_depth, color.spatial_shape)
        valid = up.valid_values()
        scale = valid.max() if valid.size and valid.max() > 0 else 1.0
        depth_in = np.where(up.mask, up.values, 0.0) / scale
        x = np.concatenate([color.values, depth_in[None]], axis=0)
        feats = []
        for w, b in self.layers:
            x = relu(conv2d(x, w, b, padding="edge"))
            feats.append(FeatureMap(x))
        fused = relu(conv2d(np.concatenate([f.values for f in feats]), *self.fuse))
        return FeatureMap(fused), feats, up


def small_encoder_provider(seed: int = 0, channels: int = 16) -> SmallEncoderProvider:
    return SmallEncoderProvider(seed, channels)


class ResidualDegradationProvider:
    """Box-filtered |coarse - reference|, normalized to unit image mean.

    Pixels invalid in either map are left out of the box filter.
    """

    def __init__(self, smooth_k: int = 3):
        if smooth_k < 1 or smooth_k % 2 == 0:
            raise ValidationError(f"smooth_k must be odd and >= 1, got {smooth_k}", "invalid-window")
        self.smooth_k = smooth_k

    def estimate(self, coarse: DepthMap, reference: DepthMap) -> DegradationMap:
        check_same_shape(coarse.shape, reference.shape, "degradation estimate")
        valid = coarse.mask & reference.mask
        resid = np.where(valid, np.abs(coarse.values - reference.values), np.nan)
        d = truncated_box_mean(resid, self.smooth_k)
        return DegradationMap(d / (d.mean() + DEGRADATION_EPS))


def residual_degradation_provider(smooth_k: int = 3) -> ResidualDegradationProvider:
    return ResidualDegradationProvider(smooth_k)


class ExternalFeatureProvider:
    """Serves precomputed features loaded from a tensor container file."""

    def __init__(self, context: FeatureMap, layer_feats: list[FeatureMap], initial: DepthMap | None = None):
        self.context = context
        self.layer_feats = list(layer_feats)
        self.initial = initial

    @property
    def context_channels(self) -> int:
        return self.context.channels + self.layer_feats[0].channels

    def produce(self, color: FeatureMap, lr_depth: DepthMap):
        shape = color.spatial_shape
        check_same_shape(self.context.spatial_shape, shape, "external context")
        initial = self.initial if self.initial is not None else upsample_to(lr_depth, shape)
        return self.context, self.layer_feats, initial

"""Degradation-driven depth binning for guided depth super-resolution."""

from .binning import (
    adjust_range,
    bin_centers,
    combine,
    local_variance,
    locate_target_bin,
    partition_uniform,
)
from .degrade import DegradeSpec, add_gaussian_noise, bicubic_resample, gaussian_blur, make_lr
from .losses import chamfer_bins, l1_rec, total_loss
from .metrics import MetricReport, metrics
from .refine import ddb_stage, refine_multistage
from .types import (
    BinIndexMap,
    BinPartition,
    CandidateVolume,
    DDBError,
    DegradationMap,
    DepthMap,
    FeatureMap,
    FormatError,
    HyperParams,
    LocalStats,
    ProbabilityVolume,
    ValidationError,
    validate,
)

__version__ = "0.1.0"

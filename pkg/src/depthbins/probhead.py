"""
Probability estimation over bin candidates.

Candidates are projected into feature space, concatenated with context
features, and fed to a single convolutional GRU step whose incoming hidden
state has been modulated by a degradation-driven deformable convolution.
A 1x1 head turns the new hidden state into per-bin probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import bilinear_sample, conv2d, relu, sigmoid, softmax
from .types import (
    CandidateVolume,
    DegradationMap,
    FeatureMap,
    ProbabilityVolume,
    ValidationError,
    check_same_shape,
)

Conv = tuple  # (weight (C_out, C_in, kh, kw), bias (C_out,))


@dataclass(frozen=True, eq=False)
class ProbHeadWeights:
    """Learnable parameters of one probability head.

    ``deform`` has shape (C, C, K, K); ``offset`` maps the one-channel
    degradation map to 2*K*K offsets laid out as (dy, dx) per tap in
    row-major tap order, and ``modulation`` to K*K pre-sigmoid scalars.
    """

    proj: tuple[Conv, Conv, Conv, Conv]
    hidden: Conv
    offset: Conv
    modulation: Conv
    deform: Conv
    gru_z: Conv
    gru_r: Conv
    gru_h: Conv
    head: Conv

    @property
    def n_bins(self) -> int:
        return self.head[0].shape[0]

    @property
    def hidden_channels(self) -> int:
        return self.hidden[0].shape[0]

    @property
    def context_channels(self) -> int:
        return self.hidden[0].shape[1]

    @property
    def deform_size(self) -> int:
        return self.deform[0].shape[-1]

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.proj):
            out[f"proj{i}.weight"] = w
            out[f"proj{i}.bias"] = b
        for name in ("hidden", "offset", "modulation", "deform", "gru_z", "gru_r", "gru_h", "head"):
            w, b = getattr(self, name)
            out[f"{name}.weight"] = w
            out[f"{name}.bias"] = b
        return out

    @classmethod
    def from_named_tensors(cls, tensors: dict[str, np.ndarray]) -> ProbHeadWeights:
        def pair(name):
            return (np.asarray(tensors[f"{name}.weight"], np.float64),
                    np.asarray(tensors[f"{name}.bias"], np.float64))

        weights = cls(
            proj=tuple(pair(f"proj{i}") for i in range(4)),
            **{n: pair(n) for n in ("hidden", "offset", "modulation", "deform",
                                    "gru_z", "gru_r", "gru_h", "head")},
        )
        weights.check()
        return weights

    def check(self) -> None:
        for name, t in self.named_tensors().items():
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"weight {name} has non-finite entries", "non-finite-value")
        hid = self.hidden_channels
        k = self.deform_size
        expect = {
            "proj3.weight": hid,
            "deform.weight": hid,
            "gru_z.weight": hid,
            "head.weight": self.n_bins,
            "offset.weight": 2 * k * k,
            "modulation.weight": k * k,
        }
        named = self.named_tensors()
        for name, c_out in expect.items():
            if named[name].shape[0] != c_out:
                raise ValidationError(
                    f"weight {name} has {named[name].shape[0]} output channels, expected {c_out}",
                    "shape-mismatch",
                )
        if self.deform[0].shape[:2] != (hid, hid) or self.head[0].shape[1] != hid:
            raise ValidationError("deform/head kernels inconsistent with hidden channels", "shape-mismatch")
        q_channels = hid + self.context_channels
        for name in ("gru_z", "gru_r", "gru_h"):
            if getattr(self, name)[0].shape[1] != q_channels + hid:
                raise ValidationError(
                    f"{name} expects {getattr(self, name)[0].shape[1]} input channels, "
                    f"need {q_channels + hid}",
                    "shape-mismatch",
                )


def _uniform_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Conv:
    bound = 1.0 / np.sqrt(c_in * k * k)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
    b = rng.uniform(-bound, bound, size=c_out)
    return w, b


def init_weights(n_bins: int, hidden_channels: int, context_channels: int,
                 seed: int, deform_size: int = 3) -> ProbHeadWeights:
    """Seeded uniform(+-1/sqrt(fan_in)) initialization."""
    rng = np.random.default_rng(seed)
    hid = hidden_channels
    q_channels = hid + context_channels
    proj = (
        _uniform_conv(rng, hid, n_bins, 3),
        _uniform_conv(rng, hid, hid, 3),
        _uniform_conv(rng, hid, hid, 3),
        _uniform_conv(rng, hid, hid, 3),
    )
    kk = deform_size * deform_size
    weights = ProbHeadWeights(
        proj=proj,
        hidden=_uniform_conv(rng, hid, context_channels, 3),
        offset=_uniform_conv(rng, 2 * kk, 1, 3),
        modulation=_uniform_conv(rng, kk, 1, 3),
        deform=_uniform_conv(rng, hid, hid, deform_size),
        gru_z=_uniform_conv(rng, hid, q_channels + hid, 3),
        gru_r=_uniform_conv(rng, hid, q_channels + hid, 3),
        gru_h=_uniform_conv(rng, hid, q_channels + hid, 3),
        head=_uniform_conv(rng, n_bins, hid, 1),
    )
    return weights


def project_candidates(centers: CandidateVolume, w: ProbHeadWeights) -> FeatureMap:
    x = centers.centers
    for weight, bias in w.proj:
        x = relu(conv2d(x, weight, bias))
    return FeatureMap(x)


def build_gru_input(projected: FeatureMap, *context: FeatureMap) -> FeatureMap:
    """Channel-wise concatenation, projected features first."""
    for c in context:
        check_same_shape(c.spatial_shape, projected.spatial_shape, "build_gru_input")
    return FeatureMap(np.concatenate([projected.values, *(c.values for c in context)], axis=0))


def init_hidden(feat: FeatureMap, w: ProbHeadWeights) -> FeatureMap:
    return FeatureMap(np.tanh(conv2d(feat.values, *w.hidden)))


def deform_offsets(deg: DegradationMap, w: ProbHeadWeights) -> tuple[np.ndarray, np.ndarray]:
    """Per-tap (offset (K*K, 2, H, W), modulation (K*K, H, W)) predicted from the degradation."""
    d = deg.values[None]
    kk = w.deform_size ** 2
    off = conv2d(d, *w.offset).reshape(kk, 2, *deg.shape)
    mod = sigmoid(conv2d(d, *w.modulation))
    return off, mod


def modulated_deform_conv(x: np.ndarray, offsets: np.ndarray, modulation: np.ndarray,
                          weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Modulated deformable convolution of a (C, H, W) map.

    Tap t at kernel position (i, j) samples ``x`` bilinearly at
    (y + i - K//2 + dy_t, x + j - K//2 + dx_t), scaled by its modulation.
    """
    c, h, wd = x.shape
    k = weight.shape[-1]
    r = k // 2
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(wd, dtype=np.float64),
                         indexing="ij")
    sampled = np.empty((k * k, c, h, wd))
    for t in range(k * k):
        i, j = divmod(t, k)
        py = ys + (i - r) + offsets[t, 0]
        px = xs + (j - r) + offsets[t, 1]
        sampled[t] = bilinear_sample(x, py, px) * modulation[t][None]
    flat_w = weight.reshape(weight.shape[0], c, k * k)
    out = np.tensordot(flat_w, sampled, axes=([1, 2], [1, 0]))
    return out + bias[:, None, None]


def deform_modulate(hidden: FeatureMap, deg: DegradationMap, w: ProbHeadWeights) -> FeatureMap:
    """Residual degradation-guided update: H + J(H, D)."""
    check_same_shape(hidden.spatial_shape, deg.shape, "deform_modulate")
    off, mod = deform_offsets(deg, w)
    j = modulated_deform_conv(hidden.values, off, mod, *w.deform)
    return FeatureMap(hidden.values + j)


def conv_gru_step(q: FeatureMap, hidden: FeatureMap, w: ProbHeadWeights) -> FeatureMap:
    check_same_shape(q.spatial_shape, hidden.spatial_shape, "conv_gru_step")
    h = hidden.values
    hq = np.concatenate([q.values, h], axis=0)
    z = sigmoid(conv2d(hq, *w.gru_z))
    r = sigmoid(conv2d(hq, *w.gru_r))
    cand = np.tanh(conv2d(np.concatenate([q.values, r * h], axis=0), *w.gru_h))
    return FeatureMap((1.0 - z) * h + z * cand)


def head_logits(hidden: FeatureMap, w: ProbHeadWeights) -> np.ndarray:
    if hidden.channels != w.head[0].shape[1]:
        raise ValidationError(
            f"probability head expects {w.head[0].shape[1]} channels, got {hidden.channels}",
            "shape-mismatch",
        )
    return conv2d(hidden.values, *w.head)


def probability_head(hidden: FeatureMap, w: ProbHeadWeights, apply_relu: bool = True) -> ProbabilityVolume:
    """ReLU(softmax(logits)) over the bin axis.

    Softmax output is strictly positive, so the ReLU never changes a value;
    ``apply_relu=False`` exists only to demonstrate that.
    """
    p = softmax(head_logits(hidden, w), axis=0)
    if apply_relu:
        p = relu(p)
    return ProbabilityVolume(p)

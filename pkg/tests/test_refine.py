import numpy as np
import pytest

from depthbins import binning
from depthbins.degrade import DegradeSpec, make_lr, synthetic_scene
from depthbins.probhead import ProbHeadWeights, init_weights
from depthbins.refine import (
    ExternalFeatureProvider,
    StageInputs,
    ddb_stage,
    init_stage_weights,
    one_hot_oracle,
    refine_multistage,
    residual_degradation_provider,
    small_encoder_provider,
    uniform_source,
)
from depthbins.types import DegradationMap, DepthMap, FeatureMap, HyperParams, ValidationError
from oracles import naive_conv2d


class ZeroDegradation:
    def estimate(self, coarse, reference):
        return DegradationMap(np.zeros(coarse.shape))


def stage_inputs(x, deg=None, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    shape = x.shape
    return StageInputs(
        x,
        FeatureMap(rng.normal(size=(channels, *shape))),
        DegradationMap(np.zeros(shape) if deg is None else deg),
        FeatureMap(rng.normal(size=(channels, *shape))),
    )


def zero_head(w: ProbHeadWeights) -> ProbHeadWeights:
    named = w.named_tensors()
    named["head.weight"] = np.zeros_like(named["head.weight"])
    named["head.bias"] = np.zeros_like(named["head.bias"])
    return ProbHeadWeights.from_named_tensors(named)


def test_stage_oracle_error_within_half_bin():
    rng = np.random.default_rng(0)
    hp = HyperParams(n_bins=8, hidden_channels=4)
    gt = DepthMap(rng.uniform(20, 30, (6, 6)))
    x = DepthMap(np.clip(gt.values + rng.normal(0, 2, (6, 6)), 20, 30))
    part = binning.partition_uniform((np.full((6, 6), 20.0), np.full((6, 6), 30.0)), 8)
    out, adjusted, probs = ddb_stage(stage_inputs(x), part, None, hp, prob_source=one_hot_oracle(gt))
    assert np.all(np.abs(out.values - gt.values) <= part.width / 2)
    # sub-bin of the GT bin: even tighter
    assert np.all(np.abs(out.values - gt.values) <= part.width / (2 * 8) + 1e-12)


def test_stage_uniform_symmetric_keeps_estimate():
    # odd bin count: the range midpoint is the middle bin's center
    hp = HyperParams(n_bins=5, hidden_channels=4)
    x = DepthMap(np.full((3, 3), 15.0))
    part = binning.partition_uniform((np.full((3, 3), 10.0), np.full((3, 3), 20.0)), 5)
    out, _, _ = ddb_stage(stage_inputs(x), part, None, hp, prob_source=uniform_source)
    np.testing.assert_allclose(out.values, 15.0, rtol=0, atol=1e-12)


def test_stage_zero_head_gives_adjusted_midpoint():
    hp = HyperParams(n_bins=6, hidden_channels=4, gamma=0.2)
    rng = np.random.default_rng(2)
    x = DepthMap(rng.uniform(10, 20, (5, 5)))
    deg = rng.uniform(0, 2, (5, 5))
    w = zero_head(init_weights(6, 4, 4, 3))
    part = binning.partition_uniform(x, 6)
    out, adjusted, probs = ddb_stage(stage_inputs(x, deg), part, w, hp)
    np.testing.assert_allclose(probs.probs, 1 / 6, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.values, (adjusted.v_min + adjusted.v_max) / 2, rtol=1e-12)


def test_stage_adjusted_range_contains_located_estimate():
    hp = HyperParams(n_bins=8, hidden_channels=4)
    rng = np.random.default_rng(4)
    x = DepthMap(rng.uniform(10, 20, (5, 5)))
    part = binning.partition_uniform(x, 8)
    deg = rng.uniform(0, 3, (5, 5))
    w = init_weights(8, 4, 4, 1)
    out, adjusted, _ = ddb_stage(stage_inputs(x, deg), part, w, hp)
    assert np.all(adjusted.v_min <= x.values) and np.all(x.values <= adjusted.v_max)
    assert np.all(out.values >= adjusted.v_min - 1e-12) and np.all(out.values <= adjusted.v_max + 1e-12)


def test_stage_requires_weights_or_source():
    hp = HyperParams(n_bins=4, hidden_channels=4)
    x = DepthMap(np.ones((2, 2)))
    with pytest.raises(ValidationError):
        ddb_stage(stage_inputs(x), binning.partition_uniform(x, 4), None, hp)


def oracle_scene(seed, size=32, width=10.0):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(20, 200)
    gt = rng.uniform(lo + 0.5, lo + width - 0.5, (size, size))
    x1 = np.clip(gt + rng.normal(0, 1.5, gt.shape), lo, lo + width)
    x1[0, 0], x1[-1, -1] = lo, lo + width
    return DepthMap(gt), DepthMap(x1)


@pytest.mark.parametrize("seed", range(3))
def test_oracle_convergence_bound(seed):
    gt, x1 = oracle_scene(seed)
    hp = HyperParams(n_bins=32, n_stages=4)
    color = FeatureMap(np.zeros((3, 32, 32)))
    pred, trace = refine_multistage(color, x1, small_encoder_provider(0, 4), ZeroDegradation(),
                                    None, hp, prob_source=one_hot_oracle(gt))
    assert np.max(np.abs(pred.values - gt.values)) <= 10 / (2 * 32 ** 4)
    widths = [np.max(p.v_max - p.v_min) for p in trace.per_stage_partitions]
    np.testing.assert_allclose(widths, [10 / 32 ** (s + 1) for s in range(4)], rtol=1e-6)


def test_single_stage_equals_ddb_stage():
    gt, color = synthetic_scene(16, 16, seed=3)
    lr = make_lr(gt, DegradeSpec(scale=2.0))
    hp = HyperParams(n_bins=8, n_stages=1, hidden_channels=8)
    fp = small_encoder_provider(1, 4)
    dp = residual_degradation_provider(3)
    weights = init_stage_weights(hp, fp.context_channels)
    pred, trace = refine_multistage(color, lr, fp, dp, weights, hp)

    context, layers, initial = fp.produce(color, lr)
    x = initial  # bicubic upsample of the LR depth
    deg = dp.estimate(x, initial)
    part = binning.partition_uniform(x, 8)
    out, _, _ = ddb_stage(StageInputs(x, layers[0], deg, context), part, weights[0], hp)
    assert np.array_equal(out.values, pred.values)
    assert len(trace.per_stage_depths) == 1


def test_constant_scene_identity_single_stage():
    gt = DepthMap(np.full((12, 12), 87.5))
    color = FeatureMap(np.full((3, 12, 12), 0.3))
    hp = HyperParams(n_bins=8, n_stages=1, hidden_channels=4)
    fp = small_encoder_provider(0, 4)
    weights = init_stage_weights(hp, fp.context_channels)
    pred, _ = refine_multistage(color, gt, fp, residual_degradation_provider(3), weights, hp)
    # degenerate range: every candidate equals the input; only softmax rounding remains
    np.testing.assert_allclose(pred.values, gt.values, rtol=1e-14, atol=0)


def test_constant_scene_identity_without_degradation():
    gt = DepthMap(np.full((12, 12), 87.5))
    color = FeatureMap(np.full((3, 12, 12), 0.3))
    hp = HyperParams(n_bins=8, n_stages=4, hidden_channels=4)
    fp = small_encoder_provider(0, 4)
    weights = init_stage_weights(hp, fp.context_channels)
    pred, trace = refine_multistage(color, gt, fp, ZeroDegradation(), weights, hp)
    np.testing.assert_allclose(pred.values, gt.values, rtol=1e-14, atol=0)
    assert all(np.all(p.v_max - p.v_min <= 1e-12) for p in trace.per_stage_partitions)


def test_weight_count_must_match_stages():
    gt, color = synthetic_scene(8, 8)
    hp = HyperParams(n_bins=4, n_stages=3, hidden_channels=4)
    fp = small_encoder_provider(0, 4)
    with pytest.raises(ValidationError):
        refine_multistage(color, gt, fp, residual_degradation_provider(),
                          init_stage_weights(hp, 8)[:2], hp)


def test_refine_deterministic_and_in_range():
    gt, color = synthetic_scene(24, 24, seed=6)
    lr = make_lr(gt, DegradeSpec(scale=3.0))
    hp = HyperParams(n_bins=16, hidden_channels=8, seed=4)
    fp = small_encoder_provider(2, 6)
    dp = residual_degradation_provider(3)
    w = init_stage_weights(hp, fp.context_channels)
    a, trace = refine_multistage(color, lr, fp, dp, w, hp)
    b, _ = refine_multistage(color, lr, fp, dp, w, hp)
    assert a.values.tobytes() == b.values.tobytes()
    for depth, part in zip(trace.per_stage_depths, trace.per_stage_partitions):
        assert np.all(depth.values >= part.v_min - 1e-9)
        assert np.all(depth.values <= part.v_max + 1e-9)


def test_range_shrinks_where_tolerance_is_small():
    gt, color = synthetic_scene(24, 24, seed=8)
    lr = make_lr(gt, DegradeSpec(scale=2.0))
    hp = HyperParams(n_bins=16, hidden_channels=8)
    fp = small_encoder_provider(0, 4)
    dp = residual_degradation_provider(3)
    _, trace = refine_multistage(color, lr, fp, dp, init_stage_weights(hp, fp.context_channels), hp)
    first = binning.partition_uniform(fp.produce(color, lr)[2], hp.n_bins)
    parts = [first] + trace.per_stage_partitions
    checked = 0
    for s in range(1, len(parts)):
        prev, cur = parts[s - 1], parts[s]
        # gamma * sigma is recovered from the widening of the target bin
        margin = ((cur.v_max - cur.v_min) - prev.width) / 2
        ok = (margin < prev.width * (hp.n_bins - 1) / 2) & (cur.v_min > 0)
        assert np.all((cur.v_max - cur.v_min)[ok] < (prev.v_max - prev.v_min)[ok])
        checked += ok.sum()
    assert checked > 0


# -- providers ---------------------------------------------------------------

def test_encoder_deterministic():
    gt, color = synthetic_scene(10, 10)
    a = small_encoder_provider(5, 4).produce(color, gt)
    b = small_encoder_provider(5, 4).produce(color, gt)
    assert a[0].values.tobytes() == b[0].values.tobytes()
    for fa, fb in zip(a[1], b[1]):
        assert fa.values.tobytes() == fb.values.tobytes()


def test_encoder_constant_input_constant_features():
    color = FeatureMap(np.full((3, 9, 9), 0.4))
    ctx, layers, _ = small_encoder_provider(1, 5).produce(color, DepthMap(np.full((9, 9), 50.0)))
    for f in [ctx, *layers]:
        assert np.allclose(f.values, f.values[:, :1, :1], rtol=0, atol=1e-12)


def test_encoder_matches_naive_conv():
    gt, color = synthetic_scene(8, 8, seed=1)
    fp = small_encoder_provider(3, 3)
    ctx, layers, up = fp.produce(color, gt)
    x = np.concatenate([color.values, (gt.values / gt.values.max())[None]])
    feats = []
    for w, b in fp.layers:
        x = np.maximum(naive_conv2d(x, w, b, padding="edge"), 0)
        feats.append(x)
    for got, ref in zip(layers, feats):
        np.testing.assert_allclose(got.values, ref, rtol=0, atol=1e-10)
    fused = np.maximum(naive_conv2d(np.concatenate(feats), *fp.fuse), 0)
    np.testing.assert_allclose(ctx.values, fused, rtol=0, atol=1e-10)
    assert len(layers) == 4 and ctx.spatial_shape == (8, 8)


def test_encoder_upsamples_to_color_grid():
    gt, color = synthetic_scene(16, 16)
    lr = make_lr(gt, DegradeSpec(scale=4.0))
    ctx, layers, initial = small_encoder_provider().produce(color, lr)
    assert initial.shape == (16, 16) and ctx.spatial_shape == (16, 16)


def test_residual_degradation_cases():
    dp = residual_degradation_provider(3)
    ref = DepthMap(np.random.default_rng(0).uniform(10, 20, (7, 7)))
    assert np.all(dp.estimate(ref, ref).values == 0)
    shifted = DepthMap(ref.values + 1.0)
    np.testing.assert_allclose(dp.estimate(shifted, ref).values, 1.0, rtol=0, atol=1e-7)


def test_residual_degradation_spike():
    dp = residual_degradation_provider(3)
    base = np.full((7, 7), 10.0)
    spiked = base.copy()
    spiked[3, 3] += 9.0
    d = dp.estimate(DepthMap(spiked), DepthMap(base)).values
    box = np.zeros((7, 7))
    box[2:5, 2:5] = 1.0  # 9/9 inside the window
    np.testing.assert_allclose(d, box / (box.mean() + 1e-8), rtol=1e-12)
    assert np.unravel_index(np.argmax(d), d.shape) == (2, 2) or d[3, 3] == d.max()


def test_external_provider():
    rng = np.random.default_rng(0)
    ctx = FeatureMap(rng.normal(size=(2, 6, 6)))
    layers = [FeatureMap(rng.normal(size=(3, 6, 6))) for _ in range(4)]
    fp = ExternalFeatureProvider(ctx, layers)
    assert fp.context_channels == 5
    c, ls, init = fp.produce(FeatureMap(np.zeros((3, 6, 6))), DepthMap(np.ones((3, 3))))
    assert c is ctx and init.shape == (6, 6)
    with pytest.raises(ValidationError):
        fp.produce(FeatureMap(np.zeros((3, 5, 6))), DepthMap(np.ones((3, 3))))

"""
Command-line entry point.

    depthbins degrade --in GT --scale S [--blur-sigma B --noise-sigma N --seed K] --out LR
    depthbins refine --lr LR --color IMG [--config CFG] --out PRED [--trace DIR]
    depthbins eval --pred PRED --gt GT [--json]
    depthbins gradcheck [--trials T --step H --seed K]
    depthbins errmap --pred PRED --gt GT --out PPM
    depthbins init-weights [--config CFG] --out WEIGHTS

Exit status: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config
from .degrade import DegradeSpec, make_lr
from .gradcheck import run_trials
from .metrics import metrics
from .probhead import ProbHeadWeights
from .refine import (
    ExternalFeatureProvider,
    init_stage_weights,
    refine_multistage,
    residual_degradation_provider,
    small_encoder_provider,
)
from .types import DDBError, DepthMap, FeatureMap, FormatError, ValidationError

log = logging.getLogger("depthbins")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
GRADCHECK_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"usage: {message}", "usage")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="depthbins", description="Degradation-driven depth binning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="make an LR depth map from GT")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--scale", type=float, required=True)
    d.add_argument("--blur-sigma", type=float, default=0.0)
    d.add_argument("--noise-mean", type=float, default=0.0)
    d.add_argument("--noise-sigma", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)

    r = sub.add_parser("refine", help="run multi-stage refinement")
    r.add_argument("--lr", required=True)
    r.add_argument("--color", required=True)
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--trace")

    e = sub.add_parser("eval", help="compare a prediction with GT")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--json", action="store_true")

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--step", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=GRADCHECK_TOL)

    m = sub.add_parser("errmap", help="write an error heatmap (PPM)")
    m.add_argument("--pred", required=True)
    m.add_argument("--gt", required=True)
    m.add_argument("--out", required=True)

    w = sub.add_parser("init-weights", help="write seeded per-stage weights")
    w.add_argument("--config")
    w.add_argument("--out", required=True)
    return p


def _providers(cfg: RunConfig):
    if cfg.provider == "external-file":
        tensors, _ = io.read_tensors(cfg.features)
        layers = [FeatureMap(tensors[f"layer{i}"]) for i in range(4) if f"layer{i}" in tensors]
        initial = DepthMap(tensors["initial_depth"]) if "initial_depth" in tensors else None
        fp = ExternalFeatureProvider(FeatureMap(tensors["context"]), layers, initial)
    else:
        fp = small_encoder_provider(cfg.encoder_seed, cfg.encoder_channels)
    return fp, residual_degradation_provider(cfg.smooth_k)


def _stage_weights(cfg: RunConfig, context_channels: int) -> list[ProbHeadWeights]:
    hp = cfg.hyper
    if cfg.weights is None:
        return init_stage_weights(hp, context_channels)
    tensors, _ = io.read_tensors(cfg.weights)
    out = []
    for i in range(hp.n_stages):
        prefix = f"stage{i}."
        sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        if not sub:
            raise ValidationError(f"weights file has no tensors for stage {i}", "missing-weights")
        try:
            out.append(ProbHeadWeights.from_named_tensors(sub))
        except KeyError as exc:
            raise ValidationError(f"stage {i} weights missing tensor {exc}", "missing-weights") from None
    return out


def _entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-300, 1.0)
    return -(probs * np.log(p)).sum(axis=0)


def cmd_degrade(args) -> int:
    gt = io.read_depth(args.inp)
    spec = DegradeSpec(args.scale, args.blur_sigma, args.noise_mean, args.noise_sigma, args.seed)
    lr = make_lr(gt, spec)
    io.write_depth(lr, args.out)
    log.info("wrote %s (%dx%d)", args.out, *lr.shape)
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    lr = io.read_depth(args.lr)
    color = io.read_color(args.color)
    fp, dp = _providers(cfg)
    weights = _stage_weights(cfg, fp.context_channels)
    pred, trace = refine_multistage(color, lr, fp, dp, weights, cfg.hyper)
    io.write_depth(pred, args.out)
    if args.trace:
        out = Path(args.trace)
        out.mkdir(parents=True, exist_ok=True)
        for i, (depth, probs) in enumerate(zip(trace.per_stage_depths, trace.per_stage_probs)):
            io.write_depth(depth, out / f"stage{i + 1}_depth.raw")
            io.write_depth(DepthMap(_entropy(probs.probs)), out / f"stage{i + 1}_entropy.pfm")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = io.read_depth(args.pred)
    gt = io.read_depth(args.gt)
    if pred.shape != gt.shape:
        raise ValidationError(
            f"prediction shape {pred.shape} does not match ground truth shape {gt.shape}",
            "shape-mismatch",
        )
    report = metrics(pred, gt)
    if args.json:
        print(report.to_json())
    else:
        rec = report.to_record()
        print(f"RMSE {rec['rmse']:.4f} cm  MAE {rec['mae']:.4f} cm  "
              f"d1 {rec['delta1']:.2f}%  d2 {rec['delta2']:.2f}%  d3 {rec['delta3']:.2f}%  "
              f"({report.valid_pixels} px)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_trials(args.trials, args.step, args.seed)
    print(report.to_json())
    if report.max_rel_error > args.tol:
        print(f"depthbins: max relative error {report.max_rel_error:.3e} exceeds {args.tol:g}",
              file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_errmap(args) -> int:
    pred = io.read_depth(args.pred)
    gt = io.read_depth(args.gt)
    io.write_error_heatmap(pred, gt, args.out)
    return EXIT_OK


def cmd_init_weights(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    fp, _ = _providers(cfg)
    tensors = {}
    for i, w in enumerate(init_stage_weights(cfg.hyper, fp.context_channels)):
        tensors.update({f"stage{i}.{k}": v for k, v in w.named_tensors().items()})
    io.write_tensors(tensors, args.out, meta={"n_stages": cfg.hyper.n_stages})
    return EXIT_OK


COMMANDS = {
    "degrade": cmd_degrade,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "errmap": cmd_errmap,
    "init-weights": cmd_init_weights,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (FormatError, OSError) as exc:
        print(f"depthbins: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DDBError as exc:
        print(f"depthbins: {exc.kind}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: synth, match, affine, coarse, instance, register, eval, jacobian.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .affine import AffineTransform, fit_affine
from .bundle import Bundle
from .coarse import CoarseField, OptimizerConfig, optimize_coarse, upsample_coarse
from .config import PipelineConfig, apply_overrides, load_config
from .container import read_vol1, write_vol1
from .errors import NumericalDivergence, RegistrationError, ShapeMismatch
from .grid import warp_labels, warp_scalar
from .instance import InstanceConfig, optimize_instance
from .matching import filter_matches, load_matches, save_matches, sscc
from .metrics import RegistrationReport, dice, landmark_error
from .pipeline import run_pipeline
from .synth import SynthSpec, make_atlas, make_pair, random_smooth_warp
from .transform import CompositeTransform, compose, folding_fraction, jacobian_determinant


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ShapeMismatch(f"dims must be D,H,W, got {text!r}")
    return tuple(parts)


def _config_from_args(args) -> PipelineConfig:
    config = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    apply_overrides(config, getattr(args, "set", None))
    return config


def _load_bundle(directory: Path) -> Bundle:
    features = read_vol1(directory / "features.vol1")
    intensity = read_vol1(directory / "intensity.vol1")
    labels_path = directory / "labels.vol1"
    labels = read_vol1(labels_path).values[..., 0] if labels_path.exists() else None
    return Bundle(
        features=features.values,
        intensity=intensity.values[..., 0],
        labels=labels,
        spacing=features.spacing,
    )


def _write_bundle(directory: Path, bundle: Bundle) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_vol1(directory / "features.vol1", bundle.features, spacing=bundle.spacing)
    write_vol1(directory / "intensity.vol1", bundle.intensity, spacing=bundle.spacing)
    if bundle.labels is not None:
        write_vol1(directory / "labels.vol1", bundle.labels.astype(np.uint16), dtype="u16", spacing=bundle.spacing)


def cmd_synth(args) -> int:
    spec = SynthSpec(
        dims=_parse_dims(args.dims),
        channels=args.channels,
        feature_smoothness=args.feature_smoothness,
        warp_amplitude=args.warp_amplitude,
        warp_smoothness=args.warp_smoothness,
        label_count=args.labels,
        seed=args.seed,
    )
    features, labels, intensity = make_atlas(spec)
    velocity = random_smooth_warp(spec)
    rng_affine = AffineTransform.from_linear_translation(
        np.eye(3), args.translation * np.array([1.0, -0.5, 0.25])
    )
    moving, fixed, gt_map = make_pair(features, labels, intensity, velocity, rng_affine)

    out = Path(args.out)
    _write_bundle(out / "moving", moving)
    _write_bundle(out / "fixed", fixed)
    write_vol1(out / "gt_map.vol1", gt_map)
    (out / "manifest.json").write_text(
        json.dumps(
            {
                "seed": spec.seed,
                "dims": list(spec.dims),
                "channels": spec.channels,
                "affine": [float(v) for v in rng_affine.matrix.ravel()],
                "gt_map": "gt_map.vol1",
            },
            indent=2,
        )
    )
    print(f"wrote synthetic pair to {out}")
    return 0


def cmd_match(args) -> int:
    config = _config_from_args(args)
    feats_m = read_vol1(args.moving_features).values
    feats_f = read_vol1(args.fixed_features).values
    matches = sscc(feats_m, feats_f, step=config.match_step, iterations=config.sscc_iterations)
    matches = filter_matches(matches, config.epsilon)
    save_matches(matches, args.out)
    print(f"{len(matches)} matches -> {args.out}")
    return 0


def cmd_affine(args) -> int:
    config = _config_from_args(args)
    matches = load_matches(args.matches)
    transform = fit_affine(matches, scale=config.feature_scale)
    Path(args.out).write_text(transform.to_json())
    print(f"affine -> {args.out}")
    return 0


def cmd_coarse(args) -> int:
    config = _config_from_args(args)
    matches = load_matches(args.matches)
    affine = AffineTransform.from_json(Path(args.affine).read_text())
    dims = read_vol1(args.fixed_features).values.shape[:3]
    opt = OptimizerConfig(
        step_size=config.coarse_step_size,
        iterations=config.coarse_iterations,
        reg_weight=config.coarse_reg_weight,
        convergence_tol=config.coarse_tol,
    )
    field = optimize_coarse(matches, affine, config.coarse_stride, dims, opt)
    write_vol1(args.out, field.lattice, attrs={"stride": str(field.stride)})
    print(f"coarse lattice {field.lattice.shape[:3]} -> {args.out}")
    return 0


def cmd_instance(args) -> int:
    config = _config_from_args(args)
    moving = _load_bundle(Path(args.moving_dir))
    fixed = _load_bundle(Path(args.fixed_dir))
    affine = (
        AffineTransform.from_json(Path(args.affine).read_text())
        if args.affine
        else AffineTransform.identity()
    )
    coarse_dense = None
    if args.coarse:
        vol = read_vol1(args.coarse)
        field = CoarseField(stride=int(vol.attrs["stride"]), lattice=vol.values)
        coarse_dense = upsample_coarse(field, fixed.dims)
    pre_map = compose(CompositeTransform(affine=affine, coarse=coarse_dense), fixed.dims)
    from .grid import warp_features

    icfg = InstanceConfig(
        lambda_sim=config.lambda_sim,
        lambda_reg=config.lambda_reg,
        intensity_term=config.intensity_term,
        lncc_window=config.lncc_window,
        parameterization=config.parameterization,
        svf_steps=config.svf_steps,
        step_size=config.instance_step_size,
        iterations=config.instance_iterations,
        convergence_tol=config.instance_tol,
    )
    dense = optimize_instance(
        warp_features(moving.features, pre_map),
        fixed.features,
        warp_scalar(moving.intensity, pre_map),
        fixed.intensity,
        np.zeros(fixed.dims + (3,)),
        icfg,
    )
    write_vol1(args.out, dense)
    print(f"instance field -> {args.out}")
    return 0


def cmd_register(args) -> int:
    config = _config_from_args(args)
    moving = _load_bundle(Path(args.moving_dir))
    fixed = _load_bundle(Path(args.fixed_dir))
    transform, report, _ = run_pipeline(config, moving, fixed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "affine.json").write_text(transform.affine.to_json())
    manifest = {"affine": "affine.json"}
    if transform.coarse is not None:
        write_vol1(out / "coarse_dense.vol1", transform.coarse)
        manifest["coarse"] = "coarse_dense.vol1"
    if transform.dense is not None:
        write_vol1(out / "dense.vol1", transform.dense)
        manifest["dense"] = "dense.vol1"
    (out / "transform.json").write_text(json.dumps(manifest, indent=2))
    (out / "report.json").write_text(report.to_json())
    print(report.format_table())
    return 0


def _load_transform(directory: Path) -> CompositeTransform:
    manifest = json.loads((directory / "transform.json").read_text())
    affine = AffineTransform.from_json((directory / manifest["affine"]).read_text())
    coarse = read_vol1(directory / manifest["coarse"]).values if "coarse" in manifest else None
    dense = read_vol1(directory / manifest["dense"]).values if "dense" in manifest else None
    return CompositeTransform(affine=affine, coarse=coarse, dense=dense)


def cmd_eval(args) -> int:
    transform = _load_transform(Path(args.transform))
    moving_labels = read_vol1(args.moving_labels).values[..., 0]
    fixed_labels = read_vol1(args.fixed_labels).values[..., 0]
    final_map = compose(transform, fixed_labels.shape)
    report = RegistrationReport()
    report.per_label_dice, report.mean_dice = dice(
        warp_labels(moving_labels, final_map), fixed_labels
    )
    report.folding_fraction = folding_fraction(jacobian_determinant(final_map))
    if args.gt_map:
        gt = read_vol1(args.gt_map).values
        from .grid import trilinear_sample
        from .matching import select_points

        pts_f = select_points(fixed_labels.shape, 4).astype(np.float64)
        pts_m = gt[pts_f[:, 0].astype(int), pts_f[:, 1].astype(int), pts_f[:, 2].astype(int)]
        report.mean_landmark_error = landmark_error(
            pts_m, pts_f, lambda pts: trilinear_sample(final_map, pts)
        )
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.format_table())
    return 0


def cmd_jacobian(args) -> int:
    vol = read_vol1(args.field)
    jac = jacobian_determinant(vol.values, displacement=args.displacement)
    if args.out:
        write_vol1(args.out, jac)
    print(f"folding_fraction {folding_fraction(jac):.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embreg", description=__doc__)
    parser.add_argument("--threads", type=int, default=1, help="worker threads (1 = deterministic reference mode)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic registration pair")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="24,24,24")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-smoothness", type=float, default=2.0)
    p.add_argument("--warp-amplitude", type=float, default=2.0)
    p.add_argument("--warp-smoothness", type=float, default=4.0)
    p.add_argument("--translation", type=float, default=1.5)
    p.add_argument("--labels", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("match", help="cycle-consistent feature matching")
    p.add_argument("--moving-features", required=True)
    p.add_argument("--fixed-features", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("affine", help="least-squares affine from matches")
    p.add_argument("--matches", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_affine)

    p = sub.add_parser("coarse", help="regularized coarse displacement from matches")
    p.add_argument("--matches", required=True)
    p.add_argument("--affine", required=True)
    p.add_argument("--fixed-features", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_coarse)

    p = sub.add_parser("instance", help="dense instance optimization")
    p.add_argument("--moving-dir", required=True)
    p.add_argument("--fixed-dir", required=True)
    p.add_argument("--affine")
    p.add_argument("--coarse")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_instance)

    p = sub.add_parser("register", help="full pipeline")
    p.add_argument("--moving-dir", required=True)
    p.add_argument("--fixed-dir", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate a saved transform")
    p.add_argument("--transform", required=True)
    p.add_argument("--moving-labels", required=True)
    p.add_argument("--fixed-labels", required=True)
    p.add_argument("--gt-map")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("jacobian", help="Jacobian determinant and folding fraction")
    p.add_argument("--field", required=True)
    p.add_argument("--displacement", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_jacobian)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (RegistrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end registration: matching, affine, coarse, instance, evaluation."""

from __future__ import annotations

import time

import numpy as np

from .affine import AffineTransform, fit_affine
from .bundle import Bundle
from .coarse import OptimizerConfig, optimize_coarse, upsample_coarse
from .config import PipelineConfig
from .errors import RegistrationError, ShapeMismatch
from .grid import warp_features, warp_labels, warp_scalar
from .instance import InstanceConfig, optimize_instance
from .matching import MatchSet, filter_matches, sscc
from .metrics import RegistrationReport, dice, landmark_error
from .transform import CompositeTransform, compose, folding_fraction, jacobian_determinant


def _stage(name: str, fn):
    try:
        return fn()
    except RegistrationError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def scale_matches(matches: MatchSet, scale: float):
    """Match coordinates converted from feature-grid to image-grid voxels."""
    return (
        matches.moving.astype(np.float64) * scale,
        matches.fixed.astype(np.float64) * scale,
    )


def run_pipeline(
    config: PipelineConfig,
    moving: Bundle,
    fixed: Bundle,
    landmarks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[CompositeTransform, RegistrationReport, dict]:
    """Run the enabled stages and evaluate the composed transform.

    ``landmarks`` is an optional ``(points_moving, points_fixed)`` pair of
    index-matched ground-truth correspondences (image-grid voxel units)
    used for the landmark-error entry of the report.

    Returns the composite transform, a report, and a dict of intermediate
    artifacts (matches, fields, warped volumes).
    """
    if moving.dims != fixed.dims:
        raise ShapeMismatch(f"bundle grids differ: {moving.dims} vs {fixed.dims}")
    dims = fixed.dims
    timings: dict[str, float] = {}
    artifacts: dict = {}

    t0 = time.perf_counter()
    matches = _stage(
        "match",
        lambda: filter_matches(
            sscc(
                moving.features,
                fixed.features,
                step=config.match_step,
                iterations=config.sscc_iterations,
            ),
            config.epsilon,
        ),
    )
    timings["match"] = time.perf_counter() - t0
    artifacts["matches"] = matches

    affine = AffineTransform.identity()
    if config.enable_affine:
        t0 = time.perf_counter()
        affine = _stage("affine", lambda: fit_affine(matches, scale=config.feature_scale))
        timings["affine"] = time.perf_counter() - t0
    artifacts["affine"] = affine

    coarse_dense = None
    if config.enable_coarse:
        t0 = time.perf_counter()
        # coarse stage works in image-grid voxel units
        if config.feature_scale != 1.0:
            xm, xf = scale_matches(matches, config.feature_scale)
            image_matches = MatchSet(
                moving=np.rint(xm).astype(np.int64),
                fixed=np.rint(xf).astype(np.int64),
                scores=matches.scores,
            )
        else:
            image_matches = matches
        opt = OptimizerConfig(
            step_size=config.coarse_step_size,
            iterations=config.coarse_iterations,
            reg_weight=config.coarse_reg_weight,
            convergence_tol=config.coarse_tol,
        )
        coarse_field = _stage(
            "coarse",
            lambda: optimize_coarse(image_matches, affine, config.coarse_stride, dims, opt),
        )
        coarse_dense = upsample_coarse(coarse_field, dims)
        timings["coarse"] = time.perf_counter() - t0
        artifacts["coarse_field"] = coarse_field
        artifacts["coarse_dense"] = coarse_dense

    dense = None
    if config.enable_instance:
        t0 = time.perf_counter()
        pre = CompositeTransform(affine=affine, coarse=coarse_dense, dense=None)
        pre_map = compose(pre, dims)
        feats_pre = warp_features(moving.features, pre_map)
        img_pre = warp_scalar(moving.intensity, pre_map)
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
        dense = _stage(
            "instance",
            lambda: optimize_instance(
                feats_pre,
                fixed.features,
                img_pre,
                fixed.intensity,
                np.zeros(dims + (3,)),
                icfg,
            ),
        )
        timings["instance"] = time.perf_counter() - t0
        artifacts["pre_map"] = pre_map

    transform = CompositeTransform(affine=affine, coarse=coarse_dense, dense=dense)
    t0 = time.perf_counter()
    final_map = compose(transform, dims)
    artifacts["final_map"] = final_map

    report = RegistrationReport(stage_timings=timings)
    report.folding_fraction = folding_fraction(jacobian_determinant(final_map))
    if moving.labels is not None and fixed.labels is not None:
        warped_labels = warp_labels(moving.labels, final_map)
        artifacts["warped_labels"] = warped_labels
        report.per_label_dice, report.mean_dice = dice(warped_labels, fixed.labels)
    if landmarks is not None:
        points_moving, points_fixed = landmarks
        from .grid import trilinear_sample

        report.mean_landmark_error = landmark_error(
            points_moving,
            points_fixed,
            lambda pts: trilinear_sample(final_map, pts),
            spacing=fixed.spacing,
        )
    timings["evaluate"] = time.perf_counter() - t0
    return transform, report, artifacts

import numpy as np
import pytest

from embreg.errors import EmptyOverlap, ShapeMismatch
from embreg.grid import normalize_features, warp_features
from embreg.instance import (
    InstanceConfig,
    instance_gradient,
    instance_objective,
    optimize_instance,
    reg_loss,
    sam_loss,
)
from embreg.synth import make_atlas, SynthSpec


def random_features(rng, dims, channels):
    return normalize_features(rng.normal(size=dims + (channels,)))


def fd_gradient(field, args, config, indices, h=1e-5):
    feats_m, feats_f, img_m, img_f = args
    out = {}
    for idx in indices:
        fp = field.copy()
        fp[idx] += h
        fm = field.copy()
        fm[idx] -= h
        out[idx] = (
            instance_objective(fp, feats_m, feats_f, img_m, img_f, config)
            - instance_objective(fm, feats_m, feats_f, img_m, img_f, config)
        ) / (2 * h)
    return out


def test_sam_loss_zero_on_identical_maps():
    rng = np.random.default_rng(0)
    feats = random_features(rng, (4, 4, 4), 6)
    assert sam_loss(feats, feats) == pytest.approx(0.0, abs=1e-12)


def test_sam_loss_orthogonal_features_is_one():
    feats_a = np.zeros((2, 2, 2, 2))
    feats_a[..., 0] = 1.0
    feats_b = np.zeros((2, 2, 2, 2))
    feats_b[..., 1] = 1.0
    assert sam_loss(feats_a, feats_b) == pytest.approx(1.0)


def test_sam_loss_ignores_masked_voxels():
    rng = np.random.default_rng(1)
    feats = random_features(rng, (3, 3, 3), 4)
    opposite = -feats.copy()
    opposite[0] = 0.0  # masked slab should not contribute
    partial = sam_loss(feats, opposite)
    assert partial == pytest.approx(2.0)  # surviving voxels have similarity -1


def test_sam_loss_raises_on_full_mask():
    with pytest.raises(EmptyOverlap):
        sam_loss(np.zeros((2, 2, 2, 3)), np.zeros((2, 2, 2, 3)))


def test_reg_loss_trivial_values():
    assert reg_loss(np.zeros((3, 3, 3, 3))) == 0.0
    const = np.full((3, 3, 3, 3), 2.5)
    assert reg_loss(const) == 0.0
    ramp = np.zeros((2, 1, 1, 3))
    ramp[1, 0, 0, 0] = 1.0  # single unit difference over 2 voxels
    assert reg_loss(ramp) == pytest.approx(0.5)


def test_reg_loss_matches_direct_sum():
    rng = np.random.default_rng(2)
    f = rng.normal(size=(4, 5, 6, 3))
    want = sum(float(np.sum(np.diff(f, axis=a) ** 2)) for a in range(3)) / (4 * 5 * 6)
    assert reg_loss(f) == pytest.approx(want, rel=1e-12)


def test_objective_zero_field_identical_volumes():
    rng = np.random.default_rng(3)
    feats = random_features(rng, (5, 5, 5), 8)
    config = InstanceConfig(lambda_sim=1.0, lambda_reg=1.0)
    value = instance_objective(np.zeros((5, 5, 5, 3)), feats, feats, None, None, config)
    assert value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("term", ["none", "ncc", "lncc"])
def test_gradient_matches_finite_differences_displacement(term):
    rng = np.random.default_rng(4)
    dims = (5, 5, 5)
    feats_m = random_features(rng, dims, 6)
    feats_f = random_features(rng, dims, 6)
    img_m = rng.normal(size=dims)
    img_f = rng.normal(size=dims)
    config = InstanceConfig(
        lambda_sim=0.8, lambda_reg=0.6, intensity_term=term, lncc_window=3
    )
    field = rng.normal(scale=0.3, size=dims + (3,))
    grad = instance_gradient(field, feats_m, feats_f, img_m, img_f, config)
    idxs = [tuple(rng.integers(0, s) for s in field.shape) for _ in range(10)]
    fd = fd_gradient(field, (feats_m, feats_f, img_m, img_f), config, idxs)
    for idx, want in fd.items():
        assert grad[idx] == pytest.approx(want, abs=1e-6)


def test_gradient_matches_finite_differences_svf():
    rng = np.random.default_rng(5)
    dims = (5, 5, 5)
    feats_m = random_features(rng, dims, 4)
    feats_f = random_features(rng, dims, 4)
    config = InstanceConfig(
        lambda_sim=1.0, lambda_reg=0.5, parameterization="svf", svf_steps=4
    )
    field = rng.normal(scale=0.2, size=dims + (3,))
    grad = instance_gradient(field, feats_m, feats_f, None, None, config)
    idxs = [tuple(rng.integers(0, s) for s in field.shape) for _ in range(8)]
    fd = fd_gradient(field, (feats_m, feats_f, None, None), config, idxs)
    for idx, want in fd.items():
        assert grad[idx] == pytest.approx(want, abs=1e-6)


def test_optimize_reduces_objective_and_recovers_small_shift():
    spec = SynthSpec(dims=(12, 12, 12), channels=8, seed=3)
    feats_f, _, _ = make_atlas(spec)
    # moving = fixed shifted by half a voxel in x (pull map x -> x + 0.5)
    shift = np.zeros((12, 12, 12, 3))
    shift[..., 2] = 0.5
    from embreg.grid import identity_grid

    feats_m = warp_features(feats_f, identity_grid((12, 12, 12)) - shift)
    # per-voxel gradients carry a 1/N factor, so the step is scaled with volume
    config = InstanceConfig(lambda_sim=1.0, lambda_reg=0.01, iterations=80, step_size=1000.0)
    start = instance_objective(np.zeros_like(shift), feats_m, feats_f, None, None, config)
    out = optimize_instance(feats_m, feats_f, None, None, np.zeros_like(shift), config)
    end = instance_objective(out, feats_m, feats_f, None, None, config)
    assert end < start
    interior = out[3:-3, 3:-3, 3:-3]
    assert abs(float(np.mean(interior[..., 2])) - 0.5) < 0.2
    assert abs(float(np.mean(interior[..., 0]))) < 0.1


def test_optimize_svf_returns_integrated_displacement():
    rng = np.random.default_rng(6)
    dims = (6, 6, 6)
    feats = random_features(rng, dims, 4)
    config = InstanceConfig(parameterization="svf", svf_steps=3, iterations=2)
    out = optimize_instance(feats, feats, None, None, np.zeros(dims + (3,)), config)
    assert out.shape == dims + (3,)
    np.testing.assert_allclose(out, 0.0, atol=1e-10)


def test_config_validation():
    with pytest.raises(ShapeMismatch):
        InstanceConfig(lambda_sim=-1.0)
    with pytest.raises(ShapeMismatch):
        InstanceConfig(intensity_term="mi")
    with pytest.raises(ShapeMismatch):
        InstanceConfig(intensity_term="lncc", lncc_window=4)
    with pytest.raises(ShapeMismatch):
        InstanceConfig(parameterization="bspline")


def test_intensity_term_requires_images():
    rng = np.random.default_rng(7)
    feats = random_features(rng, (4, 4, 4), 4)
    config = InstanceConfig(intensity_term="ncc")
    with pytest.raises(ShapeMismatch):
        instance_objective(np.zeros((4, 4, 4, 3)), feats, feats, None, None, config)

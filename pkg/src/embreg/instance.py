"""Per-pair instance optimization of a dense displacement or velocity field.

Minimizes a weighted sum of one minus mean feature similarity, an
optional intensity dissimilarity (NCC or LNCC), and a gradient-smoothness
penalty on the optimized field. Gradients are analytic through the whole
chain: trilinear sampling, per-voxel feature re-normalization, the
correlation terms, and (in velocity mode) scaling-and-squaring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyOverlap, NumericalDivergence, ShapeMismatch
from .grid import MASK_NORM_EPS, identity_grid, trilinear_sample_with_grad
from .metrics import lncc_gradient, ncc_gradient
from .transform import integrate_svf_with_tape, svf_backward


@dataclass
class InstanceConfig:
    lambda_sim: float = 1.0
    lambda_reg: float = 1.0
    intensity_term: str = "none"  # none | ncc | lncc
    lncc_window: int = 9
    parameterization: str = "displacement"  # displacement | svf
    svf_steps: int = 7
    step_size: float = 1.0
    iterations: int = 100
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.lambda_sim < 0 or self.lambda_reg < 0:
            raise ShapeMismatch("loss weights must be >= 0")
        if self.intensity_term not in ("none", "ncc", "lncc"):
            raise ShapeMismatch(f"unknown intensity term {self.intensity_term!r}")
        if self.intensity_term == "lncc" and (self.lncc_window < 3 or self.lncc_window % 2 == 0):
            raise ShapeMismatch(f"LNCC window must be odd >= 3, got {self.lncc_window}")
        if self.parameterization not in ("displacement", "svf"):
            raise ShapeMismatch(f"unknown parameterization {self.parameterization!r}")
        if self.step_size <= 0 or self.iterations < 1:
            raise ShapeMismatch("step_size must be > 0 and iterations >= 1")


def sam_loss(warped_features, fixed_features) -> float:
    """Mean of ``1 - similarity`` over voxels unmasked on both sides."""
    value, _ = _sam_terms(warped_features, fixed_features, with_grad=False)
    return value


def _sam_terms(warped, fixed, with_grad: bool):
    w = np.asarray(warped, dtype=np.float64)
    f = np.asarray(fixed, dtype=np.float64)
    if w.shape != f.shape:
        raise ShapeMismatch(f"feature maps differ: {w.shape} vs {f.shape}")
    wn = np.linalg.norm(w, axis=-1)
    fn = np.linalg.norm(f, axis=-1)
    unmasked = (wn > 0.5) & (fn > 0.5)
    n = int(np.count_nonzero(unmasked))
    if n == 0:
        raise EmptyOverlap("all voxels masked in feature loss")
    sims = np.einsum("...c,...c->...", w, f)
    value = float(np.sum((1.0 - sims)[unmasked]) / n)
    if not with_grad:
        return value, None
    grad = np.where(unmasked[..., None], -f / n, 0.0)
    return value, grad


def reg_loss(field) -> float:
    """Mean squared Frobenius norm of the forward-difference gradient."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 4 or f.shape[-1] != 3:
        raise ShapeMismatch(f"field must be (D,H,W,3), got {f.shape}")
    n = int(np.prod(f.shape[:3]))
    total = 0.0
    for a in range(3):
        d = np.diff(f, axis=a)
        total += float(np.sum(d * d))
    return total / n


def _reg_gradient(field: np.ndarray) -> np.ndarray:
    n = int(np.prod(field.shape[:3]))
    grad = np.zeros_like(field)
    for a in range(3):
        d = np.diff(field, axis=a)
        front = [slice(None)] * 4
        back = [slice(None)] * 4
        front[a] = slice(0, -1)
        back[a] = slice(1, None)
        grad[tuple(back)] += (2.0 / n) * d
        grad[tuple(front)] -= (2.0 / n) * d
    return grad


def _similarity_terms(displacement, feats_m, feats_f, img_m, img_f, config, with_grad):
    """Feature + intensity losses of a warp and, optionally, d(loss)/d(displacement)."""
    dims = displacement.shape[:3]
    coords = identity_grid(dims) + displacement
    raw, draw = trilinear_sample_with_grad(feats_m, coords)  # (...,C), (...,C,3)

    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    masked = norms[..., 0] < MASK_NORM_EPS
    safe = np.where(norms == 0.0, 1.0, norms)
    warped = np.where(masked[..., None], 0.0, raw / safe)

    value, g_warped = _sam_terms(warped, feats_f, with_grad=with_grad)
    g_coords = None
    if with_grad:
        # back through per-voxel re-normalization: (I - s s^T) / |raw|
        unit = warped
        proj = np.einsum("...c,...c->...", g_warped, unit)
        g_raw = (g_warped - proj[..., None] * unit) / safe
        g_raw = np.where(masked[..., None], 0.0, g_raw)
        g_coords = np.einsum("...ca,...c->...a", draw, g_raw)

    if config.intensity_term != "none":
        if img_m is None or img_f is None:
            raise ShapeMismatch("intensity term requested but intensities missing")
        warped_img, dimg = trilinear_sample_with_grad(np.asarray(img_m, dtype=np.float64), coords)
        if config.intensity_term == "ncc":
            corr, g_img = ncc_gradient(warped_img, img_f)
        else:
            corr, g_img = lncc_gradient(warped_img, img_f, config.lncc_window)
        value += 1.0 - corr
        if with_grad:
            g_coords = g_coords + (-g_img)[..., None] * dimg
    return value, g_coords


def instance_objective(field, feats_m, feats_f, img_m, img_f, config: InstanceConfig) -> float:
    """Weighted sum of similarity losses on the warp plus smoothness on the field."""
    value, _ = _evaluate(np.asarray(field, dtype=np.float64), feats_m, feats_f, img_m, img_f, config, with_grad=False)
    return value


def instance_gradient(field, feats_m, feats_f, img_m, img_f, config: InstanceConfig) -> np.ndarray:
    """Analytic gradient of :func:`instance_objective` w.r.t. the field."""
    _, grad = _evaluate(np.asarray(field, dtype=np.float64), feats_m, feats_f, img_m, img_f, config, with_grad=True)
    return grad


def _evaluate(field, feats_m, feats_f, img_m, img_f, config, with_grad):
    if config.parameterization == "svf":
        displacement, tape = integrate_svf_with_tape(field, config.svf_steps)
    else:
        displacement, tape = field, None

    sim_value, g_disp = _similarity_terms(
        displacement, feats_m, feats_f, img_m, img_f, config, with_grad
    )
    value = config.lambda_sim * sim_value + config.lambda_reg * reg_loss(field)
    if not with_grad:
        return value, None

    g_disp = config.lambda_sim * g_disp
    if tape is not None:
        g_field = svf_backward(g_disp, tape, config.svf_steps)
    else:
        g_field = g_disp
    g_field = g_field + config.lambda_reg * _reg_gradient(field)
    return value, g_field


def optimize_instance(
    feats_m, feats_f, img_m, img_f, init, config: InstanceConfig | None = None
) -> np.ndarray:
    """Gradient descent with step halving; returns the final displacement.

    ``init`` is the starting field in the configured parameterization
    (zero when there is no prior stage). In velocity mode the returned
    field is the integrated displacement.
    """
    config = config or InstanceConfig()
    field = np.array(init, dtype=np.float64)
    if field.ndim != 4 or field.shape[-1] != 3:
        raise ShapeMismatch(f"init field must be (D,H,W,3), got {field.shape}")
    value, grad = _evaluate(field, feats_m, feats_f, img_m, img_f, config, with_grad=True)
    if not np.isfinite(value):
        raise NumericalDivergence("initial instance objective not finite")

    for _ in range(config.iterations):
        if np.max(np.abs(grad)) < config.convergence_tol:
            break
        step = config.step_size
        accepted = False
        for _ in range(31):
            trial = field - step * grad
            trial_value, trial_grad = _evaluate(
                trial, feats_m, feats_f, img_m, img_f, config, with_grad=True
            )
            if not np.isfinite(trial_value):
                raise NumericalDivergence("instance objective diverged")
            if trial_value <= value:
                field, value, grad = trial, trial_value, trial_grad
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

    if config.parameterization == "svf":
        displacement, _ = integrate_svf_with_tape(field, config.svf_steps)
        return displacement
    return field

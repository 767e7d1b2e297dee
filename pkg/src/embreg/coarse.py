"""Coarse displacement stage: pull affinely pre-aligned matches together.

A strided lattice of 3-vector displacements is optimized so that
``y + u(y)`` with ``y = A^-1 x_f`` lands on ``x_m`` for every filtered
match, balanced against a forward-difference gradient-smoothness
penalty on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .affine import AffineTransform, apply_affine, invert_affine
from .errors import EmptyMatchSet, NumericalDivergence, ShapeMismatch
from .grid import trilinear_corners, trilinear_sample
from .matching import MatchSet


@dataclass(frozen=True)
class CoarseField:
    """Displacement lattice with one 3-vector per coarse node.

    ``lattice`` has shape ``(ceil(D/s), ceil(H/s), ceil(W/s), 3)`` in
    voxel units; node ``n`` sits at voxel coordinate ``n * stride``.
    """

    stride: int
    lattice: np.ndarray

    def __post_init__(self):
        if int(self.stride) < 1:
            raise ShapeMismatch(f"stride must be >= 1, got {self.stride}")
        lat = np.asarray(self.lattice, dtype=np.float64)
        if lat.ndim != 4 or lat.shape[-1] != 3:
            raise ShapeMismatch(f"lattice must be (Ld,Lh,Lw,3), got {lat.shape}")
        if not np.all(np.isfinite(lat)):
            raise ShapeMismatch("non-finite lattice displacement")
        object.__setattr__(self, "stride", int(self.stride))
        object.__setattr__(self, "lattice", lat)


@dataclass
class OptimizerConfig:
    step_size: float = 0.5
    iterations: int = 200
    reg_weight: float = 1.0
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.step_size <= 0 or self.iterations < 1:
            raise ShapeMismatch("step_size must be > 0 and iterations >= 1")
        if self.reg_weight < 0 or self.convergence_tol < 0:
            raise ShapeMismatch("reg_weight and convergence_tol must be >= 0")


def lattice_dims(grid_dims, stride: int) -> tuple[int, int, int]:
    return tuple(int(math.ceil(d / stride)) for d in grid_dims)


def _match_targets(matches: MatchSet, affine: AffineTransform):
    if len(matches) == 0:
        raise EmptyMatchSet("coarse stage received no matches")
    inv = invert_affine(affine)
    y = apply_affine(inv, matches.fixed.astype(np.float64))
    return y, matches.moving.astype(np.float64)


def _reg_terms(lattice: np.ndarray):
    """Forward differences along each axis (zero rows at the far boundary)."""
    return [np.diff(lattice, axis=a) for a in range(3)]


def coarse_objective(
    field: CoarseField, matches: MatchSet, affine: AffineTransform, reg_weight: float
) -> float:
    """Mean squared residual of matched points plus the smoothness penalty."""
    y, xm = _match_targets(matches, affine)
    uy = trilinear_sample(field.lattice, y / field.stride)
    resid = xm - (y + uy)
    data = float(np.mean(np.sum(resid * resid, axis=1)))
    n_nodes = int(np.prod(field.lattice.shape[:3]))
    reg = sum(float(np.sum(d * d)) for d in _reg_terms(field.lattice)) / n_nodes
    return data + float(reg_weight) * reg


def coarse_gradient(
    field: CoarseField, matches: MatchSet, affine: AffineTransform, reg_weight: float
) -> np.ndarray:
    """Exact gradient of :func:`coarse_objective` w.r.t. every lattice component."""
    y, xm = _match_targets(matches, affine)
    lat = field.lattice
    n = y.shape[0]
    uy = trilinear_sample(lat, y / field.stride)
    resid = xm - (y + uy)

    grad = np.zeros_like(lat)
    corners, weights = trilinear_corners(y / field.stride, lat.shape[:3])
    contrib = (-2.0 / n) * weights[:, :, None] * resid[:, None, :]  # (n, 8, 3)
    flat = corners.reshape(-1, 3)
    np.add.at(grad, (flat[:, 0], flat[:, 1], flat[:, 2]), contrib.reshape(-1, 3))

    n_nodes = int(np.prod(lat.shape[:3]))
    coef = 2.0 * float(reg_weight) / n_nodes
    for a, d in enumerate(_reg_terms(lat)):
        front = [slice(None)] * 4
        back = [slice(None)] * 4
        front[a] = slice(0, -1)
        back[a] = slice(1, None)
        grad[tuple(back)] += coef * d
        grad[tuple(front)] -= coef * d
    return grad


def optimize_coarse(
    matches: MatchSet,
    affine: AffineTransform,
    stride: int,
    grid_dims,
    config: OptimizerConfig | None = None,
) -> CoarseField:
    """Gradient descent from the zero lattice with step halving on increase."""
    config = config or OptimizerConfig()
    dims = lattice_dims(grid_dims, stride)
    field = CoarseField(stride=stride, lattice=np.zeros(dims + (3,)))
    value = coarse_objective(field, matches, affine, config.reg_weight)
    if not np.isfinite(value):
        raise NumericalDivergence("initial coarse objective not finite")

    for _ in range(config.iterations):
        grad = coarse_gradient(field, matches, affine, config.reg_weight)
        if np.max(np.abs(grad)) < config.convergence_tol:
            break
        step = config.step_size
        accepted = False
        for _ in range(31):
            trial = CoarseField(stride=stride, lattice=field.lattice - step * grad)
            trial_value = coarse_objective(trial, matches, affine, config.reg_weight)
            if not np.isfinite(trial_value):
                raise NumericalDivergence("coarse objective diverged")
            if trial_value <= value:
                field, value = trial, trial_value
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return field


def upsample_coarse(field: CoarseField, target_dims) -> np.ndarray:
    """Dense displacement on the target grid via trilinear lattice interpolation."""
    from .grid import identity_grid

    pts = identity_grid(target_dims) / field.stride
    return trilinear_sample(field.lattice, pts)

"""Velocity-field integration, transform composition, and folding analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import AffineTransform, apply_affine, invert_affine
from .errors import ShapeMismatch
from .grid import identity_grid, trilinear_corners, trilinear_sample, trilinear_sample_with_grad


@dataclass(frozen=True)
class CompositeTransform:
    """Affine, coarse, and dense stages of a fixed-to-moving map.

    ``coarse`` and ``dense`` are dense displacement fields on the fixed
    grid (``(D, H, W, 3)``) or ``None`` for an identity stage.
    """

    affine: AffineTransform
    coarse: np.ndarray | None = None
    dense: np.ndarray | None = None

    def __post_init__(self):
        for name in ("coarse", "dense"):
            f = getattr(self, name)
            if f is None:
                continue
            arr = np.asarray(f, dtype=np.float64)
            if arr.ndim != 4 or arr.shape[-1] != 3:
                raise ShapeMismatch(f"{name} field must be (D,H,W,3), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatch(f"non-finite {name} displacement")
            object.__setattr__(self, name, arr)
        if self.coarse is not None and self.dense is not None:
            if self.coarse.shape != self.dense.shape:
                raise ShapeMismatch(
                    f"stage grids differ: {self.coarse.shape} vs {self.dense.shape}"
                )


def _check_field(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"vector field must be (D,H,W,3), got {arr.shape}")
    return arr


def integrate_svf(velocity, steps: int = 7) -> np.ndarray:
    """Flow of a stationary velocity field via scaling and squaring.

    The initial displacement is ``v / 2**steps``; each of the ``steps``
    squarings self-composes the field with trilinear sampling (border
    clamped).
    """
    v = _check_field(velocity)
    if int(steps) < 1:
        raise ShapeMismatch(f"steps must be >= 1, got {steps}")
    grid = identity_grid(v.shape[:3])
    u = v / float(2 ** int(steps))
    for _ in range(int(steps)):
        u = u + trilinear_sample(u, grid + u)
    return u


def integrate_svf_with_tape(velocity, steps: int = 7):
    """Like :func:`integrate_svf` but keeps every intermediate field.

    The tape (list of fields, scaled start first) feeds the adjoint pass
    in :func:`svf_backward`.
    """
    v = _check_field(velocity)
    grid = identity_grid(v.shape[:3])
    u = v / float(2 ** int(steps))
    tape = [u]
    for _ in range(int(steps)):
        u = u + trilinear_sample(u, grid + u)
        tape.append(u)
    return u, tape


def svf_backward(grad_displacement, tape, steps: int) -> np.ndarray:
    """Adjoint of scaling and squaring: d(loss)/d(velocity).

    Each squaring ``u' = u + u(x + u(x))`` back-propagates through the
    direct term, the sampled lattice values, and the spatial Jacobian of
    the sampled field.
    """
    g = np.asarray(grad_displacement, dtype=np.float64)
    dims = g.shape[:3]
    grid = identity_grid(dims)
    flat_grid = grid.reshape(-1, 3)
    for k in range(int(steps) - 1, -1, -1):
        u = tape[k]
        pts = flat_grid + u.reshape(-1, 3)
        vals, dvals = trilinear_sample_with_grad(u, pts)  # (V,3), (V,3,3)
        g_flat = g.reshape(-1, 3)
        # direct term + chain through the sample location y = x + u(x)
        g_new = g_flat + np.einsum("vc,vca->va", g_flat, dvals)
        g_new = g_new.reshape(g.shape).copy()
        # adjoint of gathering lattice values of u at y
        corners, weights = trilinear_corners(pts, dims)
        contrib = weights[:, :, None] * g_flat[:, None, :]  # (V, 8, 3)
        flat_corners = corners.reshape(-1, 3)
        np.add.at(
            g_new,
            (flat_corners[:, 0], flat_corners[:, 1], flat_corners[:, 2]),
            contrib.reshape(-1, 3),
        )
        g = g_new
    return g / float(2 ** int(steps))


def compose(transform: CompositeTransform, dims=None) -> np.ndarray:
    """Materialize the composite fixed-to-moving map on the fixed grid.

    Per fixed voxel ``x``: ``y1 = x + dense(x)``, ``y2 = y1 +
    trilinear(coarse, y1)``, output ``A^-1 y2``.
    """
    if dims is None:
        if transform.dense is not None:
            dims = transform.dense.shape[:3]
        elif transform.coarse is not None:
            dims = transform.coarse.shape[:3]
        else:
            raise ShapeMismatch("grid dims required for an affine-only transform")
    grid = identity_grid(dims)
    y = grid if transform.dense is None else grid + transform.dense
    if transform.coarse is not None:
        y = y + trilinear_sample(transform.coarse, y)
    return apply_affine(invert_affine(transform.affine), y)


def compose_at_points(transform: CompositeTransform, points) -> np.ndarray:
    """Lazily evaluate the composite map at continuous fixed-grid points."""
    pts = np.asarray(points, dtype=np.float64)
    y = pts if transform.dense is None else pts + trilinear_sample(transform.dense, pts)
    if transform.coarse is not None:
        y = y + trilinear_sample(transform.coarse, y)
    return apply_affine(invert_affine(transform.affine), y)


def jacobian_determinant(field, displacement: bool = False) -> np.ndarray:
    """Per-voxel determinant of the spatial Jacobian of a dense map.

    Central differences in the interior, one-sided at faces. When
    ``displacement`` is true the identity grid is added first.
    """
    f = _check_field(field)
    if any(d < 3 for d in f.shape[:3]):
        raise ShapeMismatch(f"Jacobian needs >= 3 voxels per axis, got {f.shape[:3]}")
    phi = f + identity_grid(f.shape[:3]) if displacement else f
    jac = np.empty(f.shape[:3] + (3, 3))
    for c in range(3):
        grads = np.gradient(phi[..., c], axis=(0, 1, 2))
        for a in range(3):
            jac[..., c, a] = grads[a]
    return np.linalg.det(jac)


def folding_fraction(jac) -> float:
    """Fraction of voxels with non-positive Jacobian determinant."""
    arr = np.asarray(jac)
    return float(np.count_nonzero(arr <= 0.0) / arr.size)

"""Voxel grids, trilinear sampling, and warping primitives.

Conventions used throughout the package:

* Volumes are numpy arrays indexed ``[z, y, x]`` with dims ``(D, H, W)``.
* Vector-valued fields carry their channels last: ``(D, H, W, C)``.
* Continuous coordinates are in voxel units with the origin at voxel
  ``(0, 0, 0)``; physical spacing is metadata only.
* Sampling outside the grid clamps to the boundary (border replication).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCoordinate, ShapeMismatch

# Interpolated feature vectors with a norm below this are masked to zero.
MASK_NORM_EPS = 1e-8

# Tolerance for the unit-norm feature invariant.
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class GridShape:
    """Voxel counts ``(D, H, W)`` plus physical spacing per axis."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ShapeMismatch(f"grid dims must be three counts >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ShapeMismatch(f"spacing must be three positive lengths, got {self.spacing}")

    @property
    def voxel_count(self) -> int:
        d, h, w = self.dims
        return int(d) * int(h) * int(w)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise InvalidCoordinate(f"points must have 3 components, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidCoordinate("non-finite sampling coordinate")
    return pts


def _corner_setup(flat_pts: np.ndarray, dims: np.ndarray):
    """Clamp points and split into base corner index and in-cell fraction."""
    clamped = np.clip(flat_pts, 0.0, dims - 1.0)
    base = np.floor(clamped).astype(np.int64)
    base = np.clip(base, 0, np.maximum(dims - 2, 0))
    frac = clamped - base
    hi = np.minimum(base + 1, dims - 1)
    return base, hi, frac


def trilinear_sample(field, points):
    """Sample a scalar volume or channels-last vector field at continuous points.

    Coordinates outside the grid are clamped to the boundary. Returns an
    array shaped like ``points[..., :-1]`` (plus a channel axis for vector
    fields).
    """
    vals, _ = _trilinear(field, points, with_grad=False)
    return vals


def trilinear_sample_with_grad(field, points):
    """Like :func:`trilinear_sample` but also returns d(value)/d(coordinate).

    The gradient is zero along any axis where the point is clamped (at or
    outside the boundary), matching the piecewise-linear interpolant.
    """
    return _trilinear(field, points, with_grad=True)


def _trilinear(field, points, with_grad: bool):
    arr = np.asarray(field, dtype=np.float64)
    scalar_field = arr.ndim == 3
    if scalar_field:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ShapeMismatch(f"field must be (D,H,W) or (D,H,W,C), got {arr.shape}")
    dims = np.array(arr.shape[:3], dtype=np.int64)
    pts = _as_points(points)
    out_shape = pts.shape[:-1]
    flat = pts.reshape(-1, 3)
    n = flat.shape[0]
    c = arr.shape[3]

    base, hi, frac = _corner_setup(flat, dims)
    # Derivative of the clamped coordinate: zero outside the open interior.
    interior = (flat > 0.0) & (flat < dims - 1.0)

    vals = np.zeros((n, c))
    grads = np.zeros((n, c, 3)) if with_grad else None
    w_axis = np.empty((n, 2, 3))
    w_axis[:, 0, :] = 1.0 - frac
    w_axis[:, 1, :] = frac
    idx_axis = np.stack([base, hi], axis=1)  # (n, 2, 3)

    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                iz = idx_axis[:, dz, 0]
                iy = idx_axis[:, dy, 1]
                ix = idx_axis[:, dx, 2]
                wz = w_axis[:, dz, 0]
                wy = w_axis[:, dy, 1]
                wx = w_axis[:, dx, 2]
                fv = arr[iz, iy, ix]  # (n, c)
                vals += (wz * wy * wx)[:, None] * fv
                if with_grad:
                    sz = 1.0 if dz else -1.0
                    sy = 1.0 if dy else -1.0
                    sx = 1.0 if dx else -1.0
                    grads[:, :, 0] += (sz * wy * wx)[:, None] * fv
                    grads[:, :, 1] += (wz * sy * wx)[:, None] * fv
                    grads[:, :, 2] += (wz * wy * sx)[:, None] * fv

    if with_grad:
        grads *= interior[:, None, :]

    if scalar_field:
        vals = vals[:, 0].reshape(out_shape)
        if with_grad:
            grads = grads[:, 0, :].reshape(out_shape + (3,))
    else:
        vals = vals.reshape(out_shape + (c,))
        if with_grad:
            grads = grads.reshape(out_shape + (c, 3))
    return vals, grads


def trilinear_corners(points, dims):
    """Corner indices and weights of the trilinear stencil for each point.

    Returns ``(corners, weights)`` with shapes ``(N, 8, 3)`` int and
    ``(N, 8)``; used to scatter adjoint contributions back onto a lattice.
    """
    dims = np.asarray(dims, dtype=np.int64)
    pts = _as_points(points).reshape(-1, 3)
    base, hi, frac = _corner_setup(pts, dims)
    n = pts.shape[0]
    corners = np.empty((n, 8, 3), dtype=np.int64)
    weights = np.empty((n, 8))
    k = 0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                corners[:, k, 0] = hi[:, 0] if dz else base[:, 0]
                corners[:, k, 1] = hi[:, 1] if dy else base[:, 1]
                corners[:, k, 2] = hi[:, 2] if dx else base[:, 2]
                wz = frac[:, 0] if dz else 1.0 - frac[:, 0]
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                wx = frac[:, 2] if dx else 1.0 - frac[:, 2]
                weights[:, k] = wz * wy * wx
                k += 1
    return corners, weights


def identity_grid(dims) -> np.ndarray:
    """Dense grid of voxel coordinates, shape ``(D, H, W, 3)``."""
    d, h, w = (int(v) for v in dims)
    zz, yy, xx = np.meshgrid(
        np.arange(d, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
    )
    return np.stack([zz, yy, xx], axis=-1)


def _check_inverse_map(inverse_map) -> np.ndarray:
    m = np.asarray(inverse_map, dtype=np.float64)
    if m.ndim != 4 or m.shape[-1] != 3:
        raise ShapeMismatch(f"inverse map must be (D,H,W,3), got {m.shape}")
    return m


def warp_scalar(volume, inverse_map) -> np.ndarray:
    """Pull a scalar volume back through a dense fixed-to-moving map.

    ``out[x] = trilinear_sample(volume, inverse_map[x])`` on the grid of
    the map.
    """
    m = _check_inverse_map(inverse_map)
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise ShapeMismatch(f"volume must be (D,H,W), got {vol.shape}")
    return trilinear_sample(vol, m)


def warp_labels(labels, inverse_map) -> np.ndarray:
    """Nearest-neighbor pullback for categorical label volumes."""
    m = _check_inverse_map(inverse_map)
    lab = np.asarray(labels)
    if lab.ndim != 3:
        raise ShapeMismatch(f"labels must be (D,H,W), got {lab.shape}")
    dims = np.array(lab.shape, dtype=np.int64)
    idx = np.rint(np.clip(m, 0.0, dims - 1.0)).astype(np.int64)
    return lab[idx[..., 0], idx[..., 1], idx[..., 2]]


def normalize_features(vectors) -> np.ndarray:
    """Scale each per-voxel vector to unit norm; near-zero vectors become masked zeros."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.where(norms < MASK_NORM_EPS, 0.0, v / np.where(norms == 0.0, 1.0, norms))
    return out


def check_unit_norm(vectors, tol: float = UNIT_NORM_TOL) -> bool:
    """True when every vector is unit norm within tol or the masked zero vector."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    return bool(np.all((np.abs(norms - 1.0) <= tol) | (norms == 0.0)))


def resize_linear(field, target_dims) -> np.ndarray:
    """Endpoint-aligned linear resize of a channels-last field to a new grid."""
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatch(f"field must be (D,H,W,C), got {arr.shape}")
    src = np.array(arr.shape[:3], dtype=np.float64)
    tgt = np.array([int(d) for d in target_dims], dtype=np.float64)
    if np.any(tgt < 1):
        raise ShapeMismatch(f"invalid target dims {target_dims}")
    scale = np.where(tgt > 1, (src - 1.0) / np.maximum(tgt - 1.0, 1.0), 0.0)
    pts = identity_grid(target_dims) * scale
    return trilinear_sample(arr, pts)


def assemble_features(global_features, local_features) -> np.ndarray:
    """Concatenate a global and a local feature map into one unit-norm map.

    The global map is linearly resized onto the local grid; each half is
    L2-normalized per voxel, concatenated along channels, and the result
    is re-normalized so dot products stay true cosines in [-1, 1].
    """
    local = np.asarray(local_features, dtype=np.float64)
    if local.ndim != 4:
        raise ShapeMismatch(f"local features must be (D,H,W,C), got {local.shape}")
    resized = resize_linear(global_features, local.shape[:3])
    both = np.concatenate(
        [normalize_features(resized), normalize_features(local)], axis=-1
    )
    return normalize_features(both)


def warp_features(features, inverse_map) -> np.ndarray:
    """Channel-wise trilinear warp of a feature map, re-normalized per voxel."""
    m = _check_inverse_map(inverse_map)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 4:
        raise ShapeMismatch(f"features must be (D,H,W,C), got {feats.shape}")
    warped = trilinear_sample(feats, m)
    return normalize_features(warped)

"""Feature similarity, exhaustive correspondence search, and stable sampling.

The matcher pairs voxels of two unit-norm feature maps by dot-product
(cosine) similarity. Stable sampling iterates forward/backward
nearest-feature searches so that surviving pairs are cycle consistent,
then a similarity threshold removes low-confidence pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidStep, ShapeMismatch


@dataclass(frozen=True)
class MatchSet:
    """Corresponding voxel pairs ``(moving, fixed)`` with similarity scores.

    ``moving`` and ``fixed`` are integer arrays of shape ``(N, 3)`` in
    ``(z, y, x)`` order on the feature grid; ``scores`` has shape ``(N,)``.
    """

    moving: np.ndarray
    fixed: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.moving)
        f = np.asarray(self.fixed)
        s = np.asarray(self.scores, dtype=np.float64)
        if m.shape != f.shape or m.ndim != 2 or m.shape[1] != 3 or s.shape != (m.shape[0],):
            raise ShapeMismatch(
                f"inconsistent match arrays: {m.shape}, {f.shape}, {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ShapeMismatch("non-finite similarity score")
        if not (np.all(m == np.round(m)) and np.all(f == np.round(f))):
            raise ShapeMismatch("match coordinates must be integer voxel indices")
        object.__setattr__(self, "moving", m.astype(np.int64))
        object.__setattr__(self, "fixed", f.astype(np.int64))
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return self.moving.shape[0]


def similarity(a, b) -> float:
    """Dot product of two feature vectors (cosine similarity for unit norm)."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimensionMismatch(f"vector lengths differ: {av.shape} vs {bv.shape}")
    return float(np.dot(av.ravel(), bv.ravel()))


def select_points(dims, step: int) -> np.ndarray:
    """Evenly distributed lattice of voxel coordinates.

    Offset ``floor(step/2)`` on each axis, stride ``step``, returned in
    lexicographic ``(z, y, x)`` order.
    """
    if int(step) < 1:
        raise InvalidStep(f"step must be >= 1, got {step}")
    step = int(step)
    off = step // 2
    axes = [np.arange(min(off, d - 1), d, step, dtype=np.int64) for d in dims]
    zz, yy, xx = np.meshgrid(*axes, indexing="ij")
    return np.stack([zz.ravel(), yy.ravel(), xx.ravel()], axis=-1)


def find_points(keys, feat_key, feat_query) -> np.ndarray:
    """For each key voxel, the query voxel with the most similar feature.

    Exhaustive search over the full query lattice; ties resolve to the
    lowest lexicographic ``(z, y, x)`` coordinate. Equivalent, bit for
    bit, to a sequential brute-force scan keeping the first maximum.
    """
    fk = np.asarray(feat_key, dtype=np.float64)
    fq = np.asarray(feat_query, dtype=np.float64)
    if fk.ndim != 4 or fq.ndim != 4:
        raise ShapeMismatch("feature maps must be (D,H,W,C)")
    if fk.shape[-1] != fq.shape[-1]:
        raise DimensionMismatch(
            f"channel counts differ: {fk.shape[-1]} vs {fq.shape[-1]}"
        )
    keys = np.asarray(keys, dtype=np.int64)
    key_vecs = fk[keys[:, 0], keys[:, 1], keys[:, 2]]  # (N, C)
    dims = fq.shape[:3]
    scores = fq.reshape(-1, fq.shape[-1]) @ key_vecs.T  # (V, N)
    flat_idx = np.argmax(scores, axis=0)  # first max == lexicographic tie-break
    return np.stack(np.unravel_index(flat_idx, dims), axis=-1).astype(np.int64)


def sscc(feat_moving, feat_fixed, step: int = 4, iterations: int = 5) -> MatchSet:
    """Stable sampling via cycle consistency.

    Starts from an even lattice on the moving grid and alternates
    forward/backward nearest-feature searches for ``iterations`` rounds.
    Duplicate ``(moving, fixed)`` pairs are collapsed to one, keeping
    first-occurrence order.
    """
    if int(iterations) < 1:
        raise InvalidStep(f"iterations must be >= 1, got {iterations}")
    fm = np.asarray(feat_moving, dtype=np.float64)
    ff = np.asarray(feat_fixed, dtype=np.float64)
    x_m = select_points(fm.shape[:3], step)
    x_f = None
    for _ in range(int(iterations)):
        x_f = find_points(x_m, fm, ff)
        x_m = find_points(x_f, ff, fm)

    vm = fm[x_m[:, 0], x_m[:, 1], x_m[:, 2]]
    vf = ff[x_f[:, 0], x_f[:, 1], x_f[:, 2]]
    scores = np.einsum("nc,nc->n", vm, vf)

    pairs = np.concatenate([x_m, x_f], axis=1)
    _, first = np.unique(pairs, axis=0, return_index=True)
    keep = np.sort(first)
    return MatchSet(moving=x_m[keep], fixed=x_f[keep], scores=scores[keep])


def filter_matches(matches: MatchSet, epsilon: float) -> MatchSet:
    """Keep pairs with similarity strictly above ``epsilon``; order preserved."""
    keep = matches.scores > float(epsilon)
    return MatchSet(
        moving=matches.moving[keep],
        fixed=matches.fixed[keep],
        scores=matches.scores[keep],
    )


def save_matches(matches: MatchSet, path) -> None:
    """Write one pair per line: ``zm ym xm zf yf xf score``."""
    with open(path, "w", encoding="utf-8") as fh:
        for m, f, s in zip(matches.moving, matches.fixed, matches.scores):
            fh.write(f"{m[0]} {m[1]} {m[2]} {f[0]} {f[1]} {f[2]} {s:.9g}\n")


def load_matches(path) -> MatchSet:
    moving, fixed, scores = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ShapeMismatch(f"malformed match line: {line!r}")
            moving.append([int(p) for p in parts[0:3]])
            fixed.append([int(p) for p in parts[3:6]])
            scores.append(float(parts[6]))
    return MatchSet(
        moving=np.array(moving, dtype=np.int64).reshape(-1, 3),
        fixed=np.array(fixed, dtype=np.int64).reshape(-1, 3),
        scores=np.array(scores, dtype=np.float64),
    )

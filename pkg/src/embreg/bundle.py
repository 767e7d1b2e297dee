"""Grouping of the per-image inputs a registration consumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass
class Bundle:
    """Feature map plus intensity (and optional labels) on one grid."""

    features: np.ndarray
    intensity: np.ndarray
    labels: np.ndarray | None = None
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        i = np.asarray(self.intensity, dtype=np.float64)
        if f.ndim != 4:
            raise ShapeMismatch(f"features must be (D,H,W,C), got {f.shape}")
        if i.shape != f.shape[:3]:
            raise ShapeMismatch(f"intensity grid {i.shape} != feature grid {f.shape[:3]}")
        if self.labels is not None and np.asarray(self.labels).shape != f.shape[:3]:
            raise ShapeMismatch("label grid differs from feature grid")
        self.features = f
        self.intensity = i

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.features.shape[:3])

"""Containers shared by the keypoint, matching and pyramid stages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Keypoints:
    """Sub-pixel keypoint locations with detection scores.

    ``xy`` holds (x, y) = (column, row) in pixels. ``descriptors`` is optional and
    row-aligned with ``xy``. ``in_bounds`` is False for points that were mapped
    outside the image they belong to (they are flagged, never clamped).
    """

    xy: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray | None = None
    in_bounds: np.ndarray | None = None

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.scores) != len(self.xy):
            raise ValueError("xy and scores must have the same length")
        if self.descriptors is not None:
            self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
            if len(self.descriptors) != len(self.xy):
                raise ValueError("descriptors must be row-aligned with xy")
        if self.in_bounds is None:
            self.in_bounds = np.ones(len(self.xy), dtype=bool)
        else:
            self.in_bounds = np.asarray(self.in_bounds, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return len(self.xy)

    def subset(self, idx) -> "Keypoints":
        idx = np.asarray(idx)
        return Keypoints(
            self.xy[idx],
            self.scores[idx],
            None if self.descriptors is None else self.descriptors[idx],
            self.in_bounds[idx],
        )

    @classmethod
    def empty(cls, dim: int | None = None) -> "Keypoints":
        desc = None if dim is None else np.zeros((0, dim), dtype=np.float32)
        return cls(np.zeros((0, 2)), np.zeros(0), desc)


@dataclass(eq=False)
class MatchSet:
    """Correspondences ``idx_a[k] <-> idx_b[k]`` between two keypoint lists."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    confidence: np.ndarray | None = None
    source_level: str = "base"

    def __post_init__(self):
        self.idx_a = np.asarray(self.idx_a, dtype=np.int64).reshape(-1)
        self.idx_b = np.asarray(self.idx_b, dtype=np.int64).reshape(-1)
        if self.confidence is None:
            self.confidence = np.ones(len(self.idx_a))
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (len(self.idx_a) == len(self.idx_b) == len(self.confidence)):
            raise ValueError("idx_a, idx_b and confidence must have equal length")
        if len(self.idx_a) and (self.idx_a.min() < 0 or self.idx_b.min() < 0):
            raise ValueError("match indices must be non-negative")
        pairs = np.stack([self.idx_a, self.idx_b], axis=1)
        if len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValueError("duplicate (index_a, index_b) pair")

    def __len__(self) -> int:
        return len(self.idx_a)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.idx_a.tolist(), self.idx_b.tolist()))

    def subset(self, keep) -> "MatchSet":
        keep = np.asarray(keep)
        return MatchSet(self.idx_a[keep], self.idx_b[keep], self.confidence[keep], self.source_level)

    def swapped(self) -> "MatchSet":
        return MatchSet(self.idx_b, self.idx_a, self.confidence, self.source_level)

    def sorted(self) -> "MatchSet":
        order = np.lexsort((self.idx_b, self.idx_a))
        return self.subset(order)

    def validate(self, n_a: int, n_b: int) -> None:
        if len(self) and (self.idx_a.max() >= n_a or self.idx_b.max() >= n_b):
            raise IndexError("match index exceeds keypoint count")

    def points(self, kps_a: Keypoints, kps_b: Keypoints) -> tuple[np.ndarray, np.ndarray]:
        """Matched coordinates as two aligned (M, 2) arrays."""
        return kps_a.xy[self.idx_a], kps_b.xy[self.idx_b]

    @classmethod
    def empty(cls, source_level: str = "base") -> "MatchSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), source_level)

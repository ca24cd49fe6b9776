"""Scale / orientation warps, keypoint back-mapping and match merging for guided matching."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLevel, NonInvertible
from .types import Keypoints, MatchSet

SCALE = "scale"
ORIENTATION = "orientation"
NONE = "none"
ALL = "all"
MAX = "max"

ORIENTATIONS = ("identity", "rot+90", "rot-90", "tilt_left", "tilt_right", "tilt_up", "tilt_down")
TILT_DEG = 45.0


@dataclass(frozen=True)
class PyramidSpec:
    mode: str = SCALE
    scale_factors: tuple = (0.5, 1.0, 2.0)
    orientations: tuple = ORIENTATIONS
    combine: str = ALL
    guided_trigger_matches: int = 100

    def __post_init__(self):
        if self.mode not in (SCALE, ORIENTATION, NONE):
            raise ValueError(f"unknown pyramid mode {self.mode!r}")
        if self.combine not in (ALL, MAX):
            raise ValueError(f"unknown combine mode {self.combine!r}")
        if self.guided_trigger_matches < 0:
            raise ValueError("guided_trigger_matches must be >= 0")
        if any(not s > 0 for s in self.scale_factors) or 1.0 not in self.scale_factors:
            raise ValueError("scale factors must be positive and include 1.0")
        unknown = set(self.orientations) - set(ORIENTATIONS)
        if unknown or "identity" not in self.orientations:
            raise ValueError("orientations must be known names and include 'identity'")


@dataclass(frozen=True)
class Warp:
    """Homography from the source image into a ``size`` = (width, height) target frame."""

    name: str
    matrix: np.ndarray = field(repr=False)
    size: tuple


def _corners(w: int, h: int) -> np.ndarray:
    return np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)


def _apply(M: np.ndarray, xy: np.ndarray) -> np.ndarray:
    p = np.column_stack([xy, np.ones(len(xy))]) @ M.T
    return p[:, :2] / p[:, 2:3]


def _anchor(M: np.ndarray, w: int, h: int) -> tuple[np.ndarray, tuple]:
    """Translate M so the warped image rectangle starts at (0, 0)."""
    c = _apply(M, _corners(w, h))
    lo = c.min(axis=0)
    T = np.array([[1.0, 0.0, -lo[0]], [0.0, 1.0, -lo[1]], [0.0, 0.0, 1.0]])
    hi = c.max(axis=0) - lo
    # snap float fuzz so exact rotations keep integer extents
    hi = np.where(np.abs(hi - np.round(hi)) < 1e-9, np.round(hi), hi)
    return T @ M, (int(math.ceil(hi[0])) + 1, int(math.ceil(hi[1])) + 1)


def _centered(M: np.ndarray, w: int, h: int) -> np.ndarray:
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    C = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return M @ C


def _rotation(quarter_turns: int) -> np.ndarray:
    # +1 turns (x, y) -> (-y, x): clockwise on screen with y pointing down
    c, s = round(math.cos(quarter_turns * math.pi / 2)), round(math.sin(quarter_turns * math.pi / 2))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _tilt(axis: str, sign: float, f: float) -> np.ndarray:
    """Image-plane rotation about its central vertical ('y') or horizontal ('x') axis."""
    c, s = math.cos(math.radians(TILT_DEG)), sign * math.sin(math.radians(TILT_DEG))
    if axis == "y":
        return np.array([[f * c, 0.0, 0.0], [0.0, f, 0.0], [s, 0.0, f]])
    return np.array([[f, 0.0, 0.0], [0.0, f * c, 0.0], [0.0, s, f]])


def _orientation_matrix(name: str, w: int, h: int) -> np.ndarray:
    f = float(max(w, h))
    return {
        "identity": lambda: np.eye(3),
        "rot+90": lambda: _rotation(1),
        "rot-90": lambda: _rotation(-1),
        "tilt_left": lambda: _tilt("y", -1.0, f),
        "tilt_right": lambda: _tilt("y", 1.0, f),
        "tilt_up": lambda: _tilt("x", -1.0, f),
        "tilt_down": lambda: _tilt("x", 1.0, f),
    }[name]()


def build_warps(spec: PyramidSpec, image_size) -> list[Warp]:
    """Warps in spec order; the identity-equivalent level is always present."""
    w, h = image_size
    if spec.mode == NONE:
        return [Warp("identity", np.eye(3), (w, h))]
    if spec.mode == SCALE:
        out = []
        for s in spec.scale_factors:
            M = np.diag([s, s, 1.0])
            # smallest frame holding the scaled pixel-centre rectangle
            out.append(Warp(f"scale_{s:g}", M, (int(math.ceil(s * (w - 1) - 1e-9)) + 1,
                                                   int(math.ceil(s * (h - 1) - 1e-9)) + 1)))
        return out
    out = []
    for name in spec.orientations:
        if name == "identity":
            out.append(Warp(name, np.eye(3), (w, h)))
            continue
        M, size = _anchor(_centered(_orientation_matrix(name, w, h), w, h), w, h)
        out.append(Warp(name, M, size))
    return out


def _checked_inverse(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    Mn = M / np.abs(M).max()
    if abs(np.linalg.det(Mn)) < 1e-12:
        raise NonInvertible("warp is not invertible")
    return np.linalg.inv(Mn)


def map_keypoints(kps: Keypoints, M, image_size=None) -> Keypoints:
    """Apply M to keypoint locations; flag (never clamp) results outside ``image_size``."""
    xy = _apply(np.asarray(M, dtype=float), kps.xy) if len(kps) else kps.xy.copy()
    inb = kps.in_bounds.copy()
    if image_size is not None:
        w, h = image_size
        eps = 1e-9
        inb &= ((xy[:, 0] >= -eps) & (xy[:, 0] <= w - 1 + eps)
                & (xy[:, 1] >= -eps) & (xy[:, 1] <= h - 1 + eps))
    return Keypoints(xy, kps.scores, kps.descriptors, inb)


def map_keypoints_back(kps: Keypoints, warp, image_size=None) -> Keypoints:
    """Pull keypoints detected in a warped frame back into the source frame."""
    M = warp.matrix if isinstance(warp, Warp) else warp
    return map_keypoints(kps, _checked_inverse(M), image_size)


def concat_descriptors(per_level) -> np.ndarray:
    """Concatenate per-level descriptors in level order, then L2-normalize.

    Accepts vectors of shape (d,) or row-aligned blocks of shape (N, d).
    """
    if not len(per_level):
        raise MissingLevel("no levels given")
    for i, d in enumerate(per_level):
        if d is None:
            raise MissingLevel(f"level {i} has no descriptor")
    blocks = [np.asarray(d, dtype=np.float64) for d in per_level]
    if len({b.shape for b in blocks}) != 1:
        raise ValueError("all levels must share one descriptor shape")
    out = np.concatenate(blocks, axis=-1)
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    return (out / np.where(norm == 0, 1.0, norm)).astype(np.float32)


def _one_to_one(idx_a, idx_b, conf) -> np.ndarray:
    """Greedy assignment by confidence descending, ties by (idx_a, idx_b)."""
    order = np.lexsort((idx_b, idx_a, -conf))
    used_a, used_b, keep = set(), set(), []
    for k in order:
        a, b = int(idx_a[k]), int(idx_b[k])
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        keep.append(k)
    return np.array(keep, dtype=np.int64)


def merge_matches(sets, mode: str = ALL) -> MatchSet:
    """Combine per-level match sets.

    ALL: union keeping the highest confidence per pair, made one-to-one greedily;
    output is sorted by (idx_a, idx_b). MAX: the largest input set, earliest on ties.
    """
    sets = list(sets)
    if not sets:
        return MatchSet.empty(mode)
    if mode == MAX:
        return max(sets, key=len)  # max keeps the first of equal sizes
    if mode != ALL:
        raise ValueError(f"unknown combine mode {mode!r}")
    a = np.concatenate([s.idx_a for s in sets])
    b = np.concatenate([s.idx_b for s in sets])
    c = np.concatenate([s.confidence for s in sets])
    if not len(a):
        return MatchSet.empty(ALL)
    # best confidence per pair: sort by pair then confidence descending, take first
    order = np.lexsort((-c, b, a))
    a, b, c = a[order], b[order], c[order]
    first = np.ones(len(a), dtype=bool)
    first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    a, b, c = a[first], b[first], c[first]
    keep = np.sort(_one_to_one(a, b, c))
    return MatchSet(a[keep], b[keep], c[keep], ALL)


def level_pairs(spec: PyramidSpec, image_size_a, image_size_b):
    """All (warp_a, warp_b) combinations in spec order."""
    return list(itertools.product(build_warps(spec, image_size_a), build_warps(spec, image_size_b)))


def guided_pyramid_match(base: MatchSet, spec: PyramidSpec, matcher, image_size_a=None,
                         image_size_b=None) -> MatchSet:
    """Keep ``base`` unless it has fewer than ``spec.guided_trigger_matches`` matches.

    Otherwise ``matcher(warp_a, warp_b)`` is called for every level combination and
    must return a MatchSet in base keypoint indices; results are merged per spec.
    """
    if len(base) >= spec.guided_trigger_matches:
        return base
    if image_size_b is None:
        image_size_b = image_size_a
    if image_size_a is None:
        raise ValueError("image sizes are needed to build the pyramid warps")
    results = [matcher(wa, wb) for wa, wb in level_pairs(spec, image_size_a, image_size_b)]
    return merge_matches(results, spec.combine)

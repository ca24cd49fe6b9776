"""Keypoint post-processing: NMS, sub-pixel refinement, mask filtering, budgets.

Score maps are (H, W) arrays indexed ``[row, col]``; keypoint coordinates are
(x, y) = (col, row).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionMismatch
from .types import Keypoints

KEEP, PERSON, SKY, CAR, BUS, BICYCLE = range(6)
MASK_CLASSES = {"keep": KEEP, "person": PERSON, "sky": SKY, "car": CAR, "bus": BUS, "bicycle": BICYCLE}
# square structuring element side per masked class
EROSION_SIZE = {PERSON: 3, SKY: 5, CAR: 3, BUS: 3, BICYCLE: 3}
# softmax temperature for score maps with peak values near 1 and widths of 1 to 2 px
REFINE_TAU = 0.1


def estimate_nms_window(image_size, target_keypoints: int) -> int:
    """Half-width so that one keypoint survives per ~(2 * window)^2 pixels."""
    w, h = image_size
    if target_keypoints <= 0:
        raise ValueError("target_keypoints must be positive")
    # round half up, so the result does not depend on banker's rounding
    return max(1, int(math.floor(math.sqrt(w * h / target_keypoints) / 2.0 + 0.5)))


def _check_map(score_map) -> np.ndarray:
    s = np.asarray(score_map, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("score map must be a 2-D array")
    if not np.isfinite(s).all():
        raise ValueError("score map contains non-finite values")
    return s


def _row_major_sorted(xy: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Order by score descending, ties by (row, col)."""
    return np.lexsort((xy[:, 0], xy[:, 1], -scores))


def nms(score_map, window: int, score_threshold: float) -> Keypoints:
    """Local maxima over (2*window+1)^2 neighbourhoods with score >= threshold.

    A pixel equal to an earlier (row-major) pixel in its window loses to it, so
    plateaus keep exactly their first pixel per window.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    s = _check_map(score_map)
    size = 2 * window + 1
    peak = ndimage.maximum_filter(s, size=size, mode="constant", cval=-np.inf)
    keep = (s >= peak) & (s >= score_threshold)
    H, W = s.shape
    rows, cols = np.nonzero(keep)
    if len(rows):
        padded = np.pad(s, window, constant_values=-np.inf)
        alive = np.ones(len(rows), dtype=bool)
        # earlier neighbours: rows above (any column), then same row to the left
        for dy in range(-window, 1):
            for dx in range(-window, window + 1):
                if dy == 0 and dx >= 0:
                    break
                nb = padded[rows + window + dy, cols + window + dx]
                alive &= nb != s[rows, cols]
        rows, cols = rows[alive], cols[alive]
    xy = np.column_stack([cols, rows]).astype(np.float64)
    scores = s[rows, cols]
    order = _row_major_sorted(xy, scores)
    return Keypoints(xy[order], scores[order])


def nms_points(kps: Keypoints, window: int, score_threshold: float = 0.0) -> Keypoints:
    """NMS over a sparse keypoint list with the same keep rule as :func:`nms`.

    Neighbours are keypoints whose rounded pixels lie within Chebyshev distance
    ``window``; equal scores are resolved in favour of the earlier rounded pixel
    in row-major order, then the earlier list index.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    px = np.floor(kps.xy + 0.5)
    alive = kps.scores >= score_threshold
    if len(kps):
        tree = cKDTree(px)
        # rank = position in (row, col, index) order
        rank = np.empty(len(kps), dtype=np.int64)
        rank[np.lexsort((np.arange(len(kps)), px[:, 0], px[:, 1]))] = np.arange(len(kps))
        for i, j in tree.query_pairs(window + 0.5, p=np.inf, output_type="ndarray"):
            si, sj = kps.scores[i], kps.scores[j]
            if si > sj or (si == sj and rank[i] < rank[j]):
                alive[j] = False
            else:
                alive[i] = False
    out = kps.subset(np.flatnonzero(alive))
    return out.subset(_row_major_sorted(out.xy, out.scores))


def argsoftmax_refine(score_map, xy, radius: int = 2, tau: float = REFINE_TAU) -> np.ndarray:
    """Softmax-weighted centroid of the (2r+1)^2 patch around each integer keypoint.

    ``xy`` is (N, 2); points without full patch support are returned unchanged.
    The result never moves more than ``radius`` pixels per axis.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = _check_map(score_map)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    out = xy.copy()
    H, W = s.shape
    c = np.floor(xy + 0.5).astype(np.int64)
    ok = (c[:, 0] >= radius) & (c[:, 0] < W - radius) & (c[:, 1] >= radius) & (c[:, 1] < H - radius)
    if not ok.any():
        return out
    offs = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offs, offs, indexing="ij")
    cx, cy = c[ok, 0], c[ok, 1]
    patch = s[cy[:, None, None] + dy, cx[:, None, None] + dx] / tau
    patch -= patch.max(axis=(1, 2), keepdims=True)
    wgt = np.exp(patch)
    wgt /= wgt.sum(axis=(1, 2), keepdims=True)
    out[ok, 0] = cx + (wgt * dx).sum(axis=(1, 2))
    out[ok, 1] = cy + (wgt * dy).sum(axis=(1, 2))
    return out


def refine_keypoints(score_map, kps: Keypoints, radius: int = 2, tau: float = REFINE_TAU) -> Keypoints:
    return Keypoints(argsoftmax_refine(score_map, kps.xy, radius, tau), kps.scores,
                     kps.descriptors, kps.in_bounds)


def eroded_mask(mask) -> np.ndarray:
    """Boolean (H, W) map of pixels still masked after per-class erosion.

    Pixels outside the image count as Keep, so regions touching the border erode too.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be a 2-D array of class codes")
    out = np.zeros(mask.shape, dtype=bool)
    for cls, k in EROSION_SIZE.items():
        region = mask == cls
        if region.any():
            out |= ndimage.binary_erosion(region, structure=np.ones((k, k), bool), border_value=0)
    return out


def erode_and_filter(kps: Keypoints, mask) -> Keypoints:
    """Drop keypoints whose nearest pixel is inside an eroded masked region."""
    mask = np.asarray(mask)
    H, W = mask.shape
    px = np.floor(kps.xy + 0.5).astype(np.int64)
    if len(kps) and (px[:, 0].min() < 0 or px[:, 1].min() < 0 or px[:, 0].max() >= W or px[:, 1].max() >= H):
        raise DimensionMismatch(f"keypoints fall outside the {W}x{H} mask")
    hit = eroded_mask(mask)[px[:, 1], px[:, 0]] if len(kps) else np.zeros(0, bool)
    return kps.subset(np.flatnonzero(~hit))


def select_top_k(kps: Keypoints, k: int) -> Keypoints:
    """The ``k`` best keypoints, score-descending with row-major ties."""
    if k < 0:
        raise ValueError("k must be non-negative")
    order = _row_major_sorted(kps.xy, kps.scores)
    return kps.subset(order[:k])

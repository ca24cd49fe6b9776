"""Descriptor matching: mutual nearest neighbours, and externally computed match files."""
from __future__ import annotations

import numpy as np

from .errors import DimMismatch
from .types import MatchSet

_CHUNK = 2048


def _as_descriptors(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float32)
    if d.ndim != 2:
        raise ValueError("descriptors must be a 2-D (count, dim) array")
    return d


def match_mutual_nn(a, b, min_confidence: float = 0.0, ratio: float | None = None) -> MatchSet:
    """Pairs (i, j) that are each other's most similar descriptor.

    Similarity is the float32 dot product of L2-normalized rows; confidence is
    (1 + cosine) / 2. Argmax ties go to the lowest index. ``ratio`` optionally
    applies Lowe's test to the similarity-derived distances.
    """
    a, b = _as_descriptors(a), _as_descriptors(b)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"descriptor dims differ: {a.shape[1]} vs {b.shape[1]}")
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return MatchSet.empty()
    row_best = np.empty(n, dtype=np.int64)
    row_sim = np.empty(n, dtype=np.float32)
    row_second = np.full(n, -np.inf, dtype=np.float32)
    col_best = np.zeros(m, dtype=np.int64)
    col_sim = np.full(m, -np.inf, dtype=np.float32)
    for lo in range(0, n, _CHUNK):
        S = a[lo:lo + _CHUNK] @ b.T
        j = S.argmax(axis=1)
        row_best[lo:lo + _CHUNK] = j
        row_sim[lo:lo + _CHUNK] = S[np.arange(len(S)), j]
        if ratio is not None and m > 1:
            row_second[lo:lo + _CHUNK] = np.partition(S, m - 2, axis=1)[:, m - 2]
        i = S.argmax(axis=0)
        v = S[i, np.arange(m)]
        # strict improvement keeps the earliest chunk on ties
        better = v > col_sim
        col_best[better] = i[better] + lo
        col_sim[better] = v[better]
    ia = np.flatnonzero(col_best[row_best] == np.arange(n))
    jb = row_best[ia]
    conf = (1.0 + row_sim[ia].astype(np.float64)) / 2.0
    keep = conf >= min_confidence
    if ratio is not None and m > 1:
        # on the unit sphere squared distance is 2 - 2 cos
        d1 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * row_sim[ia].astype(np.float64)))
        d2 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * row_second[ia].astype(np.float64)))
        keep &= d1 < ratio * d2
    return MatchSet(ia[keep], jb[keep], np.clip(conf[keep], 0.0, 1.0))


def load_external_matches(path, n_a: int | None = None, n_b: int | None = None) -> MatchSet:
    """Read and validate a match file produced by another matcher."""
    from .io import read_matches

    return read_matches(path, n_a, n_b)

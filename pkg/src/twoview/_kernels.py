"""Compiled inlier-counting loops for the RANSAC hot path.

Semantics match the vectorized residuals in :mod:`twoview.geometry`; the test
suite checks the two against each other.
"""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def count_f_inliers(models, x1, x2, thr):
    """Per model, how many pairs have symmetric epipolar residual below ``thr``."""
    B = models.shape[0]
    n = x1.shape[0]
    out = np.zeros(B, dtype=np.int64)
    for b in range(B):
        F = models[b]
        c = 0
        for i in range(n):
            u1, v1 = x1[i, 0], x1[i, 1]
            u2, v2 = x2[i, 0], x2[i, 1]
            a2 = F[0, 0] * u1 + F[0, 1] * v1 + F[0, 2]
            b2 = F[1, 0] * u1 + F[1, 1] * v1 + F[1, 2]
            c2 = F[2, 0] * u1 + F[2, 1] * v1 + F[2, 2]
            a1 = F[0, 0] * u2 + F[1, 0] * v2 + F[2, 0]
            b1 = F[0, 1] * u2 + F[1, 1] * v2 + F[2, 1]
            den1 = a1 * a1 + b1 * b1
            den2 = a2 * a2 + b2 * b2
            if den1 == 0.0 or den2 == 0.0:
                continue
            alg = a2 * u2 + b2 * v2 + c2
            r = alg * alg / den1 + alg * alg / den2
            if r < thr:
                c += 1
        out[b] = c
    return out


@numba.njit(cache=True, nogil=True, fastmath=True)
def _forward_bound(h, u1, v1, u2, v2, thr):
    # branch-free (vectorizable) count of one-way transfer errors below thr; an upper
    # bound on the symmetric count since both terms are non-negative
    c = 0
    for i in range(u1.shape[0]):
        w = h[2, 0] * u1[i] + h[2, 1] * v1[i] + h[2, 2]
        du = h[0, 0] * u1[i] + h[0, 1] * v1[i] + h[0, 2] - u2[i] * w
        dv = h[1, 0] * u1[i] + h[1, 1] * v1[i] + h[1, 2] - v2[i] * w
        c += np.int64(du * du + dv * dv < thr * w * w)
    return c


@numba.njit(cache=True, nogil=True)
def count_h_inliers(models, inverses, x1, x2, thr, floor=-1):
    """Per model, how many pairs have symmetric transfer error below ``thr``.

    Models that provably cannot exceed ``floor`` inliers get -1 without an exact count.
    """
    B = models.shape[0]
    n = x1.shape[0]
    u1 = np.ascontiguousarray(x1[:, 0])
    v1 = np.ascontiguousarray(x1[:, 1])
    u2 = np.ascontiguousarray(x2[:, 0])
    v2 = np.ascontiguousarray(x2[:, 1])
    out = np.full(B, -1, dtype=np.int64)
    loose = 1.0001 * thr
    for b in range(B):
        if floor >= 0 and _forward_bound(models[b], u1, v1, u2, v2, loose) <= floor:
            continue
        h00, h01, h02 = models[b, 0, 0], models[b, 0, 1], models[b, 0, 2]
        h10, h11, h12 = models[b, 1, 0], models[b, 1, 1], models[b, 1, 2]
        h20, h21, h22 = models[b, 2, 0], models[b, 2, 1], models[b, 2, 2]
        g00, g01, g02 = inverses[b, 0, 0], inverses[b, 0, 1], inverses[b, 0, 2]
        g10, g11, g12 = inverses[b, 1, 0], inverses[b, 1, 1], inverses[b, 1, 2]
        g20, g21, g22 = inverses[b, 2, 0], inverses[b, 2, 1], inverses[b, 2, 2]
        c = 0
        for i in range(n):
            w = h20 * u1[i] + h21 * v1[i] + h22
            du = h00 * u1[i] + h01 * v1[i] + h02 - u2[i] * w
            dv = h10 * u1[i] + h11 * v1[i] + h12 - v2[i] * w
            if not du * du + dv * dv < loose * w * w or abs(w) <= 1e-15:
                continue
            du = du / w
            dv = dv / w
            r = du * du + dv * dv
            w = g20 * u2[i] + g21 * v2[i] + g22
            if abs(w) <= 1e-15:
                continue
            du = (g00 * u2[i] + g01 * v2[i] + g02) / w - u1[i]
            dv = (g10 * u2[i] + g11 * v2[i] + g12) / w - v1[i]
            r += du * du + dv * dv
            if r < thr:
                c += 1
        out[b] = c
    return out


@numba.njit(cache=True, nogil=True, inline="always")
def _adj3(M, out):
    out[0, 0] = M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1]
    out[0, 1] = M[0, 2] * M[2, 1] - M[0, 1] * M[2, 2]
    out[0, 2] = M[0, 1] * M[1, 2] - M[0, 2] * M[1, 1]
    out[1, 0] = M[1, 2] * M[2, 0] - M[1, 0] * M[2, 2]
    out[1, 1] = M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
    out[1, 2] = M[0, 2] * M[1, 0] - M[0, 0] * M[1, 2]
    out[2, 0] = M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]
    out[2, 1] = M[0, 1] * M[2, 0] - M[0, 0] * M[2, 1]
    out[2, 2] = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


@numba.njit(cache=True, nogil=True, inline="always")
def _mul3(A, B, out):
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]


@numba.njit(cache=True, nogil=True, inline="always")
def _basis4(p, M, A, out):
    # columns of the first three homogeneous points, scaled so they sum to the fourth
    for k in range(3):
        M[0, k] = p[k, 0]
        M[1, k] = p[k, 1]
        M[2, k] = 1.0
    _adj3(M, A)
    for k in range(3):
        lam = A[k, 0] * p[3, 0] + A[k, 1] * p[3, 1] + A[k, 2]
        for r in range(3):
            out[r, k] = M[r, k] * lam


@numba.njit(cache=True, nogil=True)
def _collinear4(p, tol):
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        area = ((p[j, 0] - p[i, 0]) * (p[k, 1] - p[i, 1])
                - (p[j, 1] - p[i, 1]) * (p[k, 0] - p[i, 0]))
        if abs(area) < tol:
            return True
    return False


@numba.njit(cache=True, nogil=True)
def four_point_homographies(x1n, x2n, idx, T1, T2inv, tol):
    """Closed-form homographies for (B, 4) sample indices; invalid rows are NaN.

    Each model is denormalized and scaled so its largest-magnitude entry is +1.
    """
    B = idx.shape[0]
    out = np.full((B, 3, 3), np.nan)
    p1 = np.empty((4, 2))
    p2 = np.empty((4, 2))
    B1 = np.empty((3, 3))
    B2 = np.empty((3, 3))
    A1 = np.empty((3, 3))
    C = np.empty((3, 3))
    D = np.empty((3, 3))
    H = np.empty((3, 3))
    for b in range(B):
        for k in range(4):
            p1[k, 0] = x1n[idx[b, k], 0]
            p1[k, 1] = x1n[idx[b, k], 1]
            p2[k, 0] = x2n[idx[b, k], 0]
            p2[k, 1] = x2n[idx[b, k], 1]
        if _collinear4(p1, tol) or _collinear4(p2, tol):
            continue
        _basis4(p1, C, D, B1)
        _basis4(p2, C, D, B2)
        _adj3(B1, A1)
        _mul3(B2, A1, C)
        _mul3(T2inv, C, D)
        _mul3(D, T1, H)
        big = 0.0
        for r in range(3):
            for c in range(3):
                if abs(H[r, c]) > abs(big):
                    big = H[r, c]
        if big == 0.0 or not np.isfinite(big):
            continue
        for r in range(3):
            for c in range(3):
                out[b, r, c] = H[r, c] / big
    return out


@numba.njit(cache=True, nogil=True)
def decode_samples(u, n):
    """Map uniforms (count, s) to s distinct indices in range(n) per row.

    Draw k picks among the n - k unused indices by skipping over earlier picks in
    increasing order.
    """
    count, s = u.shape
    out = np.empty((count, s), dtype=np.int64)
    prev = np.empty(s, dtype=np.int64)
    for r in range(count):
        for k in range(s):
            idx = np.int64(np.floor(u[r, k] * (n - k)))
            # insertion-sorted earlier picks
            for j in range(k):
                if idx >= prev[j]:
                    idx += 1
            out[r, k] = idx
            j = k
            while j > 0 and prev[j - 1] > idx:
                prev[j] = prev[j - 1]
                j -= 1
            prev[j] = idx
    return out

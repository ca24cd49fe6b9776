"""Projective two-view primitives: conditioning, F/H solvers, residuals, pose."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import CheiralityAmbiguous, DegenerateInput, NonInvertible

# Design-matrix rank below this is treated as a degenerate configuration. A single
# plane (or two identical views) leaves rank 6, which still admits valid rank-2 F.
_MIN_F_DESIGN_RANK = 6
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]))


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Rotation and unit translation direction mapping camera-1 to camera-2 coordinates.

    A point ``X`` in the first camera frame lands at ``rotation @ X + s * translation``
    in the second one, for an unknown positive scale ``s``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        if abs(np.linalg.norm(t) - 1.0) > 1e-12:
            raise ValueError("translation must be a unit vector")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_rt(cls, R, t) -> "RelativePose":
        t = np.asarray(t, dtype=float)
        return cls(R, t / np.linalg.norm(t))


def to_homogeneous(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def from_homogeneous(xh: np.ndarray) -> np.ndarray:
    return xh[..., :-1] / xh[..., -1:]


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def apply_homography(H: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Map (N, 2) points through ``H`` with perspective divide."""
    return from_homogeneous(to_homogeneous(x) @ np.asarray(H, dtype=float).T)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {x.shape}")
    return x


def hartley_normalize(points) -> tuple[np.ndarray, np.ndarray]:
    """Similarity transform moving ``points`` to zero centroid and mean radius sqrt(2).

    Returns ``(T, normalized)`` where ``normalized`` equals ``points`` mapped by ``T``.
    """
    x = _as_points(points)
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    if d <= 1e-12 * max(1.0, np.abs(c).max()):
        raise DegenerateInput("all points coincide")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return T, (x - c) * s


# ---------------------------------------------------------------------------
# Fundamental matrix
# ---------------------------------------------------------------------------

def _f_design(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    # rows of x2^T F x1 = 0 for row-major flattened F; works on (..., N, 2)
    u1, v1 = x1[..., 0], x1[..., 1]
    u2, v2 = x2[..., 0], x2[..., 1]
    one = np.ones_like(u1)
    return np.stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, one], axis=-1)


def _enforce_rank2(F: np.ndarray) -> np.ndarray:
    U, S, Vt = np.linalg.svd(F)
    S = S.copy()
    S[..., 2] = 0.0
    return (U * S[..., None, :]) @ Vt


def _canonical_sign(M: np.ndarray) -> np.ndarray:
    # largest-magnitude entry made positive, so solvers are deterministic in sign
    flat = M.reshape(M.shape[:-2] + (9,))
    idx = np.abs(flat).argmax(axis=-1)
    sign = np.sign(np.take_along_axis(flat, idx[..., None], axis=-1))[..., None]
    sign[sign == 0] = 1.0
    return M * sign


def _unit_frobenius(M: np.ndarray) -> np.ndarray:
    n = np.sqrt((M ** 2).sum(axis=(-2, -1), keepdims=True))
    return M / np.where(n > 0, n, 1.0)


def eight_point_batch(x1n: np.ndarray, x2n: np.ndarray, T1: np.ndarray, T2: np.ndarray) -> np.ndarray:
    """Solve a batch of (B, n>=8) normalized samples; returns (B, 3, 3) unit-norm rank-2 F
    expressed in the original (de-normalized) coordinates."""
    A = _f_design(x1n, x2n)
    _, _, Vt = np.linalg.svd(A, full_matrices=A.shape[-2] < 9)
    F = Vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    F = _enforce_rank2(F)
    F = T2.T @ F @ T1
    return _canonical_sign(_unit_frobenius(F))


def estimate_f_eight_point(x1, x2) -> np.ndarray:
    """Normalized 8-point fundamental matrix with ``x2^T F x1 = 0``.

    The result has rank 2 and unit Frobenius norm. Degenerate scenes whose
    solution family is not unique (a single plane, identical views) still get a
    member of that family; only configurations with design rank below 6 raise.
    """
    x1, x2 = _as_points(x1), _as_points(x2)
    if len(x1) != len(x2):
        raise ValueError("x1 and x2 must have the same length")
    if len(x1) < 8:
        raise DegenerateInput(f"need at least 8 correspondences, got {len(x1)}")
    T1, x1n = hartley_normalize(x1)
    T2, x2n = hartley_normalize(x2)
    s = np.linalg.svd(_f_design(x1n, x2n), compute_uv=False)
    rank = int((s > _RANK_RTOL * s[0]).sum())
    if rank < _MIN_F_DESIGN_RANK:
        raise DegenerateInput(f"design matrix rank {rank} is too low")
    return eight_point_batch(x1n[None], x2n[None], T1, T2)[0]


def refine_f_sampson(x1, x2, F, iterations: int = 3) -> np.ndarray:
    """Iteratively reweighted 8-point fit approximating the Sampson-error minimizer.

    Each pass reweights the algebraic rows by the inverse first-order error scale
    of the current ``F``; the result keeps rank 2 and unit norm.
    """
    x1, x2 = _as_points(x1), _as_points(x2)
    T1, x1n = hartley_normalize(x1)
    T2, x2n = hartley_normalize(x2)
    A = _f_design(x1n, x2n)
    Fn = np.linalg.inv(T2).T @ np.asarray(F, dtype=float) @ np.linalg.inv(T1)
    x1h, x2h = to_homogeneous(x1n), to_homogeneous(x2n)
    for _ in range(iterations):
        l2 = x1h @ Fn.T
        l1 = x2h @ Fn
        scale = np.sqrt(l2[:, 0] ** 2 + l2[:, 1] ** 2 + l1[:, 0] ** 2 + l1[:, 1] ** 2)
        w = 1.0 / np.maximum(scale, 1e-12 * max(scale.max(), 1e-300))
        _, _, Vt = np.linalg.svd(A * w[:, None], full_matrices=len(A) < 9)
        Fn = _enforce_rank2(Vt[-1].reshape(3, 3))
    return _canonical_sign(_unit_frobenius(T2.T @ Fn @ T1))


def fundamental_from_pose(R, t, K1, K2) -> np.ndarray:
    """F = K2^-T [t]x R K1^-1, unit Frobenius norm."""
    K1 = K1.matrix if isinstance(K1, CameraIntrinsics) else np.asarray(K1, dtype=float)
    K2 = K2.matrix if isinstance(K2, CameraIntrinsics) else np.asarray(K2, dtype=float)
    F = np.linalg.inv(K2).T @ skew(t) @ np.asarray(R, dtype=float) @ np.linalg.inv(K1)
    return _canonical_sign(_unit_frobenius(F))


# ---------------------------------------------------------------------------
# Homography
# ---------------------------------------------------------------------------

def _h_design(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    u1, v1 = x1[..., 0], x1[..., 1]
    u2, v2 = x2[..., 0], x2[..., 1]
    z, o = np.zeros_like(u1), np.ones_like(u1)
    r1 = np.stack([u1, v1, o, z, z, z, -u2 * u1, -u2 * v1, -u2], axis=-1)
    r2 = np.stack([z, z, z, u1, v1, o, -v2 * u1, -v2 * v1, -v2], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def _max_entry_normalize(H: np.ndarray) -> np.ndarray:
    flat = H.reshape(H.shape[:-2] + (9,))
    idx = np.abs(flat).argmax(axis=-1)
    m = np.take_along_axis(flat, idx[..., None], axis=-1)[..., None]
    return H / np.where(m == 0, 1.0, m)


def _triple_areas(x: np.ndarray) -> np.ndarray:
    """Twice the signed area of every triple in (..., 4, 2) point sets -> (..., 4)."""
    out = []
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b, c = x[..., i, :], x[..., j, :], x[..., k, :]
        out.append((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                   - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))
    return np.stack(out, axis=-1)


def minimal_sample_collinear(x1n: np.ndarray, x2n: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where a (B, 4, 2) normalized sample has 3 collinear points in either image."""
    return (np.abs(_triple_areas(x1n)) < tol).any(axis=-1) | (np.abs(_triple_areas(x2n)) < tol).any(axis=-1)


def _adjugate(M: np.ndarray) -> np.ndarray:
    a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 0, 2]
    d, e, f = M[..., 1, 0], M[..., 1, 1], M[..., 1, 2]
    g, h, i = M[..., 2, 0], M[..., 2, 1], M[..., 2, 2]
    out = np.empty(M.shape[:-2] + (3, 3))
    out[..., 0, 0] = e * i - f * h
    out[..., 0, 1] = c * h - b * i
    out[..., 0, 2] = b * f - c * e
    out[..., 1, 0] = f * g - d * i
    out[..., 1, 1] = a * i - c * g
    out[..., 1, 2] = c * d - a * f
    out[..., 2, 0] = d * h - e * g
    out[..., 2, 1] = b * g - a * h
    out[..., 2, 2] = a * e - b * d
    return out


def _basis_from_four(x: np.ndarray) -> np.ndarray:
    """Matrix sending the canonical projective basis onto four (..., 4, 2) points."""
    xh = np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
    M = np.swapaxes(xh[..., :3, :], -1, -2)
    lam = (_adjugate(M) @ xh[..., 3, :, None])[..., 0]
    return M * lam[..., None, :]


def dlt_batch(x1n: np.ndarray, x2n: np.ndarray, T1: np.ndarray, T2: np.ndarray) -> np.ndarray:
    """Homographies for a batch of normalized samples, largest entry scaled to +1.

    Four-point samples use the closed-form basis mapping; larger ones the SVD null vector.
    """
    if x1n.shape[-2] == 4:
        Hn = _basis_from_four(x2n) @ _adjugate(_basis_from_four(x1n))
    else:
        A = _h_design(x1n, x2n)
        _, _, Vt = np.linalg.svd(A, full_matrices=A.shape[-2] < 9)
        Hn = Vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    H = np.linalg.inv(T2) @ Hn @ T1
    return _max_entry_normalize(H)


def estimate_h_dlt(x1, x2) -> np.ndarray:
    """Normalized DLT homography mapping ``x1`` onto ``x2``."""
    x1, x2 = _as_points(x1), _as_points(x2)
    if len(x1) != len(x2):
        raise ValueError("x1 and x2 must have the same length")
    if len(x1) < 4:
        raise DegenerateInput(f"need at least 4 correspondences, got {len(x1)}")
    T1, x1n = hartley_normalize(x1)
    T2, x2n = hartley_normalize(x2)
    if len(x1) == 4 and minimal_sample_collinear(x1n, x2n, tol=1e-9):
        raise DegenerateInput("three of the four points are collinear")
    A = _h_design(x1n, x2n)
    s = np.linalg.svd(A, compute_uv=False)
    if (s > _RANK_RTOL * s[0]).sum() < 8:
        raise DegenerateInput("homography design matrix is rank deficient")
    H = dlt_batch(x1n, x2n, T1, T2)
    # judged in the conditioned frame so the verdict does not depend on pixel scale
    if abs(np.linalg.det(_max_entry_normalize(T2 @ H @ np.linalg.inv(T1)))) < 1e-12:
        raise DegenerateInput("estimated homography is singular")
    return H


def refine_h_transfer(x1, x2, H) -> np.ndarray:
    """Levenberg-Marquardt polish of ``H`` on the symmetric transfer error."""
    x1, x2 = _as_points(x1), _as_points(x2)
    T1, x1n = hartley_normalize(x1)
    T2, x2n = hartley_normalize(x2)
    Hn = T2 @ np.asarray(H, dtype=float) @ np.linalg.inv(T1)
    Hn = Hn / np.linalg.norm(Hn)

    def residuals(h):
        M = h.reshape(3, 3)
        fwd = to_homogeneous(x1n) @ M.T
        bwd = to_homogeneous(x2n) @ np.linalg.inv(M).T
        return np.concatenate([
            (fwd[:, :2] / fwd[:, 2:] - x2n).ravel(),
            (bwd[:, :2] / bwd[:, 2:] - x1n).ravel(),
        ])

    try:
        sol = least_squares(residuals, Hn.ravel(), method="lm", max_nfev=200)
    except (np.linalg.LinAlgError, ValueError):
        return _max_entry_normalize(np.asarray(H, dtype=float))
    if not np.all(np.isfinite(sol.x)):
        return _max_entry_normalize(np.asarray(H, dtype=float))
    return _max_entry_normalize(np.linalg.inv(T2) @ sol.x.reshape(3, 3) @ T1)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _apply_rows(M: np.ndarray, x: np.ndarray):
    """Rows of ``M @ [x, y, 1]`` as three contiguous (..., N) arrays."""
    px, py = x[:, 0], x[:, 1]
    return tuple(M[..., r, 0, None] * px + M[..., r, 1, None] * py + M[..., r, 2, None] for r in range(3))


def _line_dist_sq(a, b, c, x: np.ndarray) -> np.ndarray:
    den = a * a + b * b
    num = a * x[:, 0] + b * x[:, 1] + c
    with np.errstate(divide="ignore", invalid="ignore"):
        d = num * num / den
    d[den == 0] = np.inf
    return d


def epipolar_distances_sq(F, x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """One-sided squared point-to-epipolar-line distances.

    Returns ``(d1, d2)``: ``d1`` is the distance of ``x1`` to ``F^T x2`` and ``d2``
    the distance of ``x2`` to ``F x1``. A zero line gives ``inf``. ``F`` may be a
    batch (B, 3, 3), in which case outputs are (B, N).
    """
    F = np.asarray(F, dtype=float)
    x1, x2 = _as_points(x1), _as_points(x2)
    d2 = _line_dist_sq(*_apply_rows(F, x1), x2)
    d1 = _line_dist_sq(*_apply_rows(np.swapaxes(F, -1, -2), x2), x1)
    return d1, d2


def epipolar_residual_symmetric(F, x1, x2):
    """d^2(x2, F x1) + d^2(x1, F^T x2) in squared pixels; scalar for a single pair."""
    scalar = np.ndim(x1) == 1
    d1, d2 = epipolar_distances_sq(F, x1, x2)
    r = d1 + d2
    return float(r[..., 0]) if scalar else r


def _transfer_sq(M: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    u, v, w = _apply_rows(M, src)
    with np.errstate(divide="ignore", invalid="ignore"):
        du = u / w - dst[:, 0]
        dv = v / w - dst[:, 1]
        d = du * du + dv * dv
    d[~(np.abs(w) > 1e-15)] = np.inf
    return d


def transfer_distances_sq(H, x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """One-sided squared transfer errors ``(|x1 - H^-1 x2|^2, |x2 - H x1|^2)``.

    Points sent to infinity give ``inf``. ``H`` may be a (B, 3, 3) batch.
    """
    H = np.asarray(H, dtype=float)
    x1, x2 = _as_points(x1), _as_points(x2)
    return _transfer_sq(np.linalg.inv(H), x2, x1), _transfer_sq(H, x1, x2)


def transfer_error_symmetric(H, x1, x2):
    """|x2 - H x1|^2 + |x1 - H^-1 x2|^2 with perspective divide, squared pixels."""
    H = _max_entry_normalize(np.asarray(H, dtype=float))
    if abs(np.linalg.det(H)) < 1e-12:
        raise NonInvertible("homography is singular")
    scalar = np.ndim(x1) == 1
    d1, d2 = transfer_distances_sq(H, x1, x2)
    r = d1 + d2
    return float(r[0]) if scalar else r


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

def triangulate(P1: np.ndarray, P2: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear (DLT) triangulation; returns homogeneous (N, 4) points."""
    A = np.stack([
        x1[:, 0, None] * P1[2] - P1[0],
        x1[:, 1, None] * P1[2] - P1[1],
        x2[:, 0, None] * P2[2] - P2[0],
        x2[:, 1, None] * P2[2] - P2[1],
    ], axis=1)
    _, _, Vt = np.linalg.svd(A, full_matrices=A.shape[-2] < 9)
    return Vt[:, -1, :]


_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def essential_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) factorizations of an essential matrix."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    R1, R2 = U @ _W @ Vt, U @ _W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def cheirality_count(R: np.ndarray, t: np.ndarray, x1n: np.ndarray, x2n: np.ndarray) -> int:
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([R, t[:, None]])
    X = triangulate(P1, P2, x1n, x2n)
    w = X[:, 3]
    z1 = X[:, 2] * w
    z2 = (X @ P2[2]) * w
    return int(((z1 > 0) & (z2 > 0)).sum())


def recover_pose_from_f(F, K1: CameraIntrinsics, K2: CameraIntrinsics, x1, x2) -> RelativePose:
    """Relative pose from F via the essential matrix and a cheirality vote over ``x1, x2``."""
    x1, x2 = _as_points(x1), _as_points(x2)
    if len(x1) < 1:
        raise CheiralityAmbiguous("no correspondences to test cheirality")
    E = K2.matrix.T @ np.asarray(F, dtype=float) @ K1.matrix
    x1n = from_homogeneous(to_homogeneous(x1) @ np.linalg.inv(K1.matrix).T)
    x2n = from_homogeneous(to_homogeneous(x2) @ np.linalg.inv(K2.matrix).T)
    best, best_count = None, -1
    for R, t in essential_candidates(E):
        n = cheirality_count(R, t, x1n, x2n)
        if n > best_count:
            best, best_count = (R, t), n
    if 2 * best_count <= len(x1):
        raise CheiralityAmbiguous(
            f"best decomposition puts only {best_count} of {len(x1)} points in front of both cameras")
    R, t = best
    # re-orthonormalize against round-off
    U, _, Vt = np.linalg.svd(R)
    return RelativePose(U @ Vt, t / np.linalg.norm(t))

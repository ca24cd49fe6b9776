"""RANSAC for F and H, DEGENSAC plane-degeneracy handling, and adaptive F/H selection.

Sampling is counter-based: hypothesis ``i`` of a branch always draws its minimal
sample from the same position of a Philox stream keyed by the seed, so batched
or threaded evaluation reproduces the serial loop exactly.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    DegenerateInput,
    InsufficientOffPlane,
    NoModelFound,
    NotEnoughCorrespondences,
)
from ._kernels import count_f_inliers, count_h_inliers, decode_samples, four_point_homographies
from .geometry import (
    _adjugate,
    eight_point_batch,
    epipolar_distances_sq,
    estimate_f_eight_point,
    estimate_h_dlt,
    hartley_normalize,
    refine_f_sampson,
    refine_h_transfer,
    skew,
    to_homogeneous,
    transfer_distances_sq,
)

FUNDAMENTAL = "fundamental"
HOMOGRAPHY = "homography"

RH_THRESHOLD = 0.45

# Stream layout, in Philox blocks of four 64-bit words. The homography branch is the
# fundamental stream shifted by a fixed stride; plane-and-parallax draws get their own
# window per triggering hypothesis.
_H_STRIDE = 1 << 40
_PARALLAX_BASE = 1 << 41
_PARALLAX_WINDOW = 1 << 24

# least-squares re-estimation passes on the final inlier set
_REFIT_ROUNDS = 2
_FIRST_BATCH = 64
_PLANE_REFIT_ROUNDS = 10

# Triplet templates for an 8-point sample: every 5-subset of {0..7} contains one of
# them (all triplets of {0,1,2,3} plus all of {4,5,6,7}), so five coplanar sample
# points always include a fully coplanar triplet.
DEGENERACY_TRIPLETS = tuple(combinations(range(4), 3)) + tuple(combinations(range(4, 8), 3))


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 100_000
    inlier_threshold_px: float = 1.1
    confidence: float = 0.9999
    rng_seed: int = 0
    degeneracy_check: bool = True
    min_inliers: int = 15
    parallax_iterations: int = 500
    # SF/SH scoring in chi-square units of score_sigma_px**2
    sf_threshold: float = 3.84
    sh_threshold: float = 5.99
    score_gamma: float = 5.99
    score_sigma_px: float = math.sqrt(2.0)
    rh_threshold: float = RH_THRESHOLD
    batch_size: int = 1024

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier_threshold_px must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.min_inliers < 0:
            raise ValueError("min_inliers must be >= 0")
        if min(self.sf_threshold, self.sh_threshold, self.score_gamma, self.score_sigma_px) <= 0:
            raise ValueError("scoring constants must be positive")

    @property
    def symmetric_threshold_sq(self) -> float:
        """Inlier bound on the two-sided residual sum, in squared pixels."""
        return 2.0 * self.inlier_threshold_px ** 2


@dataclass(eq=False)
class ModelHypothesis:
    kind: str
    matrix: np.ndarray
    inliers: np.ndarray
    score: float
    iterations: int = 0
    degenerate_recoveries: int = 0


@dataclass(eq=False)
class ModelSelectionResult:
    sf: float
    sh: float
    rh: float
    chosen: str
    f_hypothesis: ModelHypothesis | None
    h_hypothesis: ModelHypothesis | None

    @property
    def model(self) -> ModelHypothesis:
        return self.h_hypothesis if self.chosen == HOMOGRAPHY else self.f_hypothesis

    @property
    def inliers(self) -> np.ndarray:
        return self.model.inliers


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _blocks_per_draw(sample_size: int) -> int:
    return -(-sample_size // 4)


def draw_samples(seed: int, block_start: int, count: int, n: int, sample_size: int) -> np.ndarray:
    """``count`` minimal samples (without replacement) of ``sample_size`` indices from ``range(n)``.

    Sample ``k`` depends only on ``(seed, block_start + k * blocks_per_draw)``.
    """
    bpd = _blocks_per_draw(sample_size)
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0x7477_6F76_6965_77], dtype=np.uint64)
    counter = np.array([block_start % (1 << 64), 0, 0, 0], dtype=np.uint64)
    raw = np.random.Philox(key=key, counter=counter).random_raw(count * bpd * 4)
    u = (raw.reshape(count, bpd * 4)[:, :sample_size] >> np.uint64(11)) * (1.0 / (1 << 53))
    return decode_samples(np.ascontiguousarray(u), n)


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    """Iterations k with (1 - confidence) = (1 - w^s)^k."""
    p_good = inlier_ratio ** sample_size
    if p_good <= 0.0:
        return math.inf
    if p_good >= 1.0:
        return 1.0
    return math.log(1.0 - confidence) / math.log1p(-p_good)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("TVG_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Residuals and scores
# ---------------------------------------------------------------------------

def _f_residuals(F, x1, x2):
    d1, d2 = epipolar_distances_sq(F, x1, x2)
    return d1 + d2


def _h_residuals(H, x1, x2):
    with np.errstate(all="ignore"):
        d1, d2 = transfer_distances_sq(H, x1, x2)
    r = d1 + d2
    return np.where(np.isfinite(r), r, np.inf)


def _truncated_score(d: np.ndarray, threshold: float, gamma: float) -> float:
    # correctly rounded, so the score is exactly monotone and independent of term order
    return math.fsum(gamma - d[d < threshold])


def score_sf(F, x1, x2, threshold_px2: float = 3.84, gamma: float = 5.99) -> float:
    """Sum over both sides of ``gamma - d^2`` for one-sided epipolar distances under ``threshold_px2``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d1, d2 = epipolar_distances_sq(F, x1, x2)
    return _truncated_score(d1, threshold_px2, gamma) + _truncated_score(d2, threshold_px2, gamma)


def score_sh(H, x1, x2, threshold_px2: float = 5.99, gamma: float = 5.99) -> float:
    """Same as :func:`score_sf` with the two one-sided transfer errors under ``H`` and ``H^-1``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    with np.errstate(all="ignore"):
        d1, d2 = transfer_distances_sq(H, x1, x2)
    return _truncated_score(d1, threshold_px2, gamma) + _truncated_score(d2, threshold_px2, gamma)


# ---------------------------------------------------------------------------
# DEGENSAC
# ---------------------------------------------------------------------------

def _h_from_f_and_triplets(F: np.ndarray, e2: np.ndarray, x1t: np.ndarray, x2t: np.ndarray):
    """Plane homographies compatible with F through (T, 3, 3) homogeneous point triplets.

    Returns (T, 3, 3) models and a validity mask.
    """
    A = skew(e2) @ F
    c = np.cross(x2t, e2)
    den = (c * c).sum(axis=-1)
    num = (np.cross(x2t, x1t @ A.T) * c).sum(axis=-1)
    ok = (den >= 1e-20).all(axis=-1)
    scale = np.abs(x1t).max(axis=(1, 2)) ** 3
    ok &= np.abs(np.linalg.det(x1t)) >= 1e-12 * scale
    H = np.full(x1t.shape, np.nan)
    if ok.any():
        v = np.linalg.solve(x1t[ok], (num[ok] / den[ok])[..., None])[..., 0]
        H[ok] = A - e2[None, :, None] * v[:, None, :]
    return H, ok


def degeneracy_check_h(x1s, x2s, F, threshold_px: float):
    """Look for a homography explaining at least 5 of an 8-point sample consistent with F.

    Returns the homography refit on the consistent sample points, or ``None``.
    """
    x1s, x2s = np.asarray(x1s, dtype=float), np.asarray(x2s, dtype=float)
    F = np.asarray(F, dtype=float)
    # scale-free conditioning for the H-from-F construction
    T1, x1n = hartley_normalize(x1s) if np.ptp(x1s, axis=0).max() > 0 else (np.eye(3), x1s)
    T2, x2n = hartley_normalize(x2s) if np.ptp(x2s, axis=0).max() > 0 else (np.eye(3), x2s)
    Fn = np.linalg.inv(T2).T @ F @ np.linalg.inv(T1)
    U, _, _ = np.linalg.svd(Fn)
    e2 = U[:, 2]
    x1h, x2h = to_homogeneous(x1n), to_homogeneous(x2n)
    thr = 2.0 * threshold_px ** 2
    tri = np.array(DEGENERACY_TRIPLETS)
    Hn, ok = _h_from_f_and_triplets(Fn, e2, x1h[tri], x2h[tri])
    ok &= np.abs(np.linalg.det(np.where(ok[:, None, None], Hn, 0.0))) >= 1e-12 * np.abs(Hn).max(axis=(1, 2)) ** 3
    if not ok.any():
        return None
    Hs = np.linalg.inv(T2) @ Hn[ok] @ T1
    consistent = _h_residuals(Hs, x1s, x2s) < thr
    hits = np.flatnonzero(consistent.sum(axis=1) >= 5)
    if len(hits):
        # first triplet in template order wins
        H, keep = Hs[hits[0]], consistent[hits[0]]
        try:
            return estimate_h_dlt(x1s[keep], x2s[keep])
        except DegenerateInput:
            return H / np.abs(H).max()
    return None


def _parallax_fundamentals(H: np.ndarray, x1a, x2a, x1b, x2b) -> np.ndarray:
    """F = [e']x H with e' the intersection of the two parallax lines (batched)."""
    hx_a = to_homogeneous(x1a) @ H.T
    hx_b = to_homogeneous(x1b) @ H.T
    la = np.cross(hx_a, to_homogeneous(x2a))
    lb = np.cross(hx_b, to_homogeneous(x2b))
    e2 = np.cross(la, lb)
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    S = np.zeros((len(e2), 3, 3))
    S[:, 0, 1], S[:, 0, 2], S[:, 1, 2] = -e2[:, 2], e2[:, 1], -e2[:, 0]
    S[:, 1, 0], S[:, 2, 0], S[:, 2, 1] = e2[:, 2], -e2[:, 1], e2[:, 0]
    F = S @ H
    return F / np.linalg.norm(F, axis=(1, 2), keepdims=True)


def degensac_recover(x1, x2, degenerate_h, cfg: RansacConfig,
                     incumbent: ModelHypothesis | None = None, stream_index: int = 0) -> ModelHypothesis:
    """Plane-and-parallax F from a dominant-plane homography.

    The plane homography is refit on all of its support, then pairs of off-plane
    correspondences fix the epipole. The best parallax hypothesis is returned when it
    has more inliers than ``incumbent`` (which is returned otherwise).
    """
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    thr = cfg.symmetric_threshold_sq
    H = np.asarray(degenerate_h, dtype=float)
    on_plane = _h_residuals(H, x1, x2) < thr
    # a plane found from a handful of noisy sample points can be poor; grow its support
    for _ in range(_PLANE_REFIT_ROUNDS):
        if on_plane.sum() < 4:
            break
        try:
            H_new = estimate_h_dlt(x1[on_plane], x2[on_plane])
        except DegenerateInput:
            break
        grown = _h_residuals(H_new, x1, x2) < thr
        if grown.sum() <= on_plane.sum():
            break
        H, on_plane = H_new, grown
    off = np.flatnonzero(~on_plane)
    if len(off) < 2:
        raise InsufficientOffPlane(f"{len(off)} correspondences off the dominant plane")

    best_F, best_count = None, -1
    limit = min(cfg.parallax_iterations, math.comb(len(off), 2) * 4)
    base = _PARALLAX_BASE + stream_index * _PARALLAX_WINDOW
    done = 0
    while done < limit:
        count = min(cfg.batch_size, limit - done)
        pick = off[draw_samples(cfg.rng_seed, base + done, count, len(off), 2)]
        with np.errstate(all="ignore"):
            Fs = _parallax_fundamentals(H, x1[pick[:, 0]], x2[pick[:, 0]], x1[pick[:, 1]], x2[pick[:, 1]])
        valid = np.isfinite(Fs).all(axis=(1, 2))
        counts = np.full(count, -1, dtype=np.int64)
        if valid.any():
            counts[valid] = count_f_inliers(np.ascontiguousarray(Fs[valid]), x1, x2, thr)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_F, best_count = Fs[j], int(counts[j])
            off_ratio = max(0.0, (best_count - on_plane.sum()) / len(off))
            limit = min(limit, done + j + 1 + int(math.ceil(required_iterations(off_ratio, 2, cfg.confidence))))
        done += count
    if best_F is None:
        raise InsufficientOffPlane("no valid parallax hypothesis")
    if incumbent is not None and best_count <= len(incumbent.inliers):
        return incumbent
    inliers = np.flatnonzero(_f_residuals(best_F, x1, x2) < thr)
    return ModelHypothesis(FUNDAMENTAL, best_F, inliers, float(len(inliers)))


# ---------------------------------------------------------------------------
# RANSAC driver
# ---------------------------------------------------------------------------

@dataclass
class _Incumbent:
    matrix: np.ndarray | None = None
    count: int = -1
    recoveries: int = 0


def _ransac(x1, x2, kind: str, cfg: RansacConfig) -> ModelHypothesis:
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    if x1.shape != x2.shape or x1.ndim != 2 or x1.shape[1] != 2:
        raise ValueError("x1 and x2 must both have shape (N, 2)")
    n = len(x1)
    s = 8 if kind == FUNDAMENTAL else 4
    if n < s:
        raise NotEnoughCorrespondences(f"{kind} needs at least {s} correspondences, got {n}")
    T1, x1n = hartley_normalize(x1)
    T2, x2n = hartley_normalize(x2)
    T2inv = np.linalg.inv(T2)
    thr = cfg.symmetric_threshold_sq
    residuals = _f_residuals if kind == FUNDAMENTAL else _h_residuals
    base = 0 if kind == FUNDAMENTAL else _H_STRIDE
    bpd = _blocks_per_draw(s)

    def evaluate(start: int, count: int, floor: int):
        idx = draw_samples(cfg.rng_seed, base + start * bpd, count, n, s)
        with np.errstate(all="ignore"):
            if kind == FUNDAMENTAL:
                models = eight_point_batch(x1n[idx], x2n[idx], T1, T2)
                valid = np.isfinite(models).all(axis=(1, 2))
            else:
                models = four_point_homographies(x1n, x2n, idx, T1, T2inv, 1e-6)
                valid = np.isfinite(models).all(axis=(1, 2))
        counts = np.full(count, -1, dtype=np.int64)
        if valid.any():
            good = np.ascontiguousarray(models[valid])
            if kind == FUNDAMENTAL:
                counts[valid] = count_f_inliers(good, x1, x2, thr)
            else:
                counts[valid] = count_h_inliers(good, _adjugate(good), x1, x2, thr, floor)
        return idx, models, counts

    best = _Incumbent()
    limit = cfg.max_iterations
    done = 0
    threads = _thread_count()
    # small first batches keep easy problems cheap once the early exit kicks in
    batch = min(_FIRST_BATCH, cfg.batch_size)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while done < limit:
            starts = []
            for _ in range(threads):
                pos = starts[-1][0] + starts[-1][1] if starts else done
                if pos >= limit:
                    break
                starts.append((pos, min(batch, limit - pos)))
                batch = min(2 * batch, cfg.batch_size)
            # hypotheses that cannot beat the incumbent are skipped; best only grows, so
            # the outcome does not depend on when this snapshot is taken
            floor = best.count
            results = (pool.map(lambda a: evaluate(*a, floor), starts) if pool
                       else [evaluate(*starts[0], floor)])
            for (start, count), (idx, models, counts) in zip(starts, results):
                if start >= limit:
                    break
                # serial reduction: visit improvements in hypothesis order
                j = 0
                while j < count and start + j < limit:
                    better = np.flatnonzero(counts[j:] > best.count)
                    if not len(better) or start + j + better[0] >= limit:
                        break
                    j += int(better[0])
                    best.matrix, best.count = models[j], int(counts[j])
                    if kind == FUNDAMENTAL and cfg.degeneracy_check:
                        _degensac_step(x1, x2, idx[j], best, cfg, start + j)
                    needed = required_iterations(best.count / n, s, cfg.confidence)
                    if needed < math.inf:
                        limit = min(limit, max(start + j + 1, int(math.ceil(needed))))
                    j += 1
                done = min(start + count, limit)
    finally:
        if pool:
            pool.shutdown()

    if best.matrix is None or best.count < cfg.min_inliers:
        raise NoModelFound(f"best {kind} hypothesis has {max(best.count, 0)} inliers")

    matrix = best.matrix
    inl = residuals(matrix, x1, x2) < thr
    for _ in range(_REFIT_ROUNDS):
        if inl.sum() < s:
            break  # too few inliers to refit; keep the minimal-sample model
        try:
            if kind == FUNDAMENTAL:
                refit = refine_f_sampson(x1[inl], x2[inl], estimate_f_eight_point(x1[inl], x2[inl]))
            else:
                refit = refine_h_transfer(x1[inl], x2[inl], estimate_h_dlt(x1[inl], x2[inl]))
        except DegenerateInput:
            break
        matrix, inl = refit, residuals(refit, x1, x2) < thr
    inliers = np.flatnonzero(inl)
    return ModelHypothesis(kind, matrix, inliers, float(len(inliers)), iterations=done,
                           degenerate_recoveries=best.recoveries)


def _degensac_step(x1, x2, sample: np.ndarray, best: _Incumbent, cfg: RansacConfig, hyp_index: int) -> None:
    H = degeneracy_check_h(x1[sample], x2[sample], best.matrix, cfg.inlier_threshold_px)
    if H is None:
        return
    current = np.flatnonzero(_f_residuals(best.matrix, x1, x2) < cfg.symmetric_threshold_sq)
    incumbent = ModelHypothesis(FUNDAMENTAL, best.matrix, current, float(len(current)))
    try:
        rec = degensac_recover(x1, x2, H, cfg, incumbent=incumbent, stream_index=hyp_index)
    except InsufficientOffPlane:
        return
    if rec is not incumbent:
        best.matrix, best.count = rec.matrix, len(rec.inliers)
        best.recoveries += 1


def ransac_fundamental(x1, x2, cfg: RansacConfig = RansacConfig()) -> ModelHypothesis:
    """Robust rank-2 F (DEGENSAC when ``cfg.degeneracy_check``), refit on its inliers."""
    return _ransac(x1, x2, FUNDAMENTAL, cfg)


def ransac_homography(x1, x2, cfg: RansacConfig = RansacConfig()) -> ModelHypothesis:
    """Robust homography from 4-point samples scored by symmetric transfer error."""
    return _ransac(x1, x2, HOMOGRAPHY, cfg)


def adaptive_fh(x1, x2, cfg: RansacConfig = RansacConfig()) -> ModelSelectionResult:
    """Fit F and H, score both on every correspondence, keep H iff RH = SH/(SH+SF) > threshold."""
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    if len(x1) < 8:
        raise NotEnoughCorrespondences(f"need at least 8 correspondences, got {len(x1)}")
    f_hyp = h_hyp = None
    errors = []
    try:
        f_hyp = ransac_fundamental(x1, x2, cfg)
    except NoModelFound as exc:
        errors.append(exc)
    try:
        h_hyp = ransac_homography(x1, x2, cfg)
    except NoModelFound as exc:
        errors.append(exc)
    if f_hyp is None and h_hyp is None:
        raise NoModelFound("neither the fundamental nor the homography branch found a model") from errors[0]

    var = cfg.score_sigma_px ** 2
    gamma = cfg.score_gamma * var
    sf = score_sf(f_hyp.matrix, x1, x2, cfg.sf_threshold * var, gamma) if f_hyp else 0.0
    sh = score_sh(h_hyp.matrix, x1, x2, cfg.sh_threshold * var, gamma) if h_hyp else 0.0
    if f_hyp is None:
        rh = 1.0
    elif h_hyp is None:
        rh = 0.0
    else:
        rh = sh / (sh + sf) if sh + sf > 0 else 0.0
    chosen = select_model(rh, cfg.rh_threshold)
    if f_hyp is None:
        chosen = HOMOGRAPHY
    elif h_hyp is None:
        chosen = FUNDAMENTAL
    return ModelSelectionResult(sf, sh, rh, chosen, f_hyp, h_hyp)


def select_model(rh: float, threshold: float = RH_THRESHOLD) -> str:
    """Homography strictly above the threshold, fundamental otherwise."""
    return HOMOGRAPHY if rh > threshold else FUNDAMENTAL

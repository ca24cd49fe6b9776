"""Ground-truth two-view scenes for tests, demos and the ``synth`` command.

Everything here is deterministic per ``rng_seed``. Poses follow the package
convention ``X2 = R @ X1 + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ProjectionFailed
from .geometry import CameraIntrinsics, RelativePose, fundamental_from_pose
from .types import Keypoints, MatchSet

RANDOM_CLOUD = "random_cloud"
SINGLE_PLANE = "single_plane"
PLANE_DOMINANT = "plane_dominant"
STRUCTURES = (RANDOM_CLOUD, SINGLE_PLANE, PLANE_DOMINANT)

DEFAULT_IMAGE_SIZE = (1024, 768)
DEFAULT_INTRINSICS = CameraIntrinsics(800.0, 800.0, 512.0, 384.0)

_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneSpec:
    structure: str = RANDOM_CLOUD
    n_points: int = 200
    noise_px: float = 0.0
    outlier_fraction: float = 0.0
    off_plane_fraction: float = 0.1  # only used by PLANE_DOMINANT
    pose: RelativePose | None = None  # None draws a random pose
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    rng_seed: int = 0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if not 0.0 <= self.off_plane_fraction <= 1.0:
            raise ValueError("off_plane_fraction must lie in [0, 1]")
        if self.noise_px < 0:
            raise ValueError("noise_px must be non-negative")


@dataclass(eq=False)
class Scene:
    x1: np.ndarray
    x2: np.ndarray
    is_inlier: np.ndarray
    pose: RelativePose
    F: np.ndarray
    H: np.ndarray | None
    on_plane: np.ndarray
    points3d: np.ndarray
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    image_size: tuple[int, int]
    spec: SceneSpec = field(repr=False, default=None)

    @property
    def matches(self) -> MatchSet:
        n = len(self.x1)
        return MatchSet(np.arange(n), np.arange(n), np.ones(n))

    @property
    def keypoints(self) -> tuple[Keypoints, Keypoints]:
        n = len(self.x1)
        return Keypoints(self.x1, np.ones(n)), Keypoints(self.x2, np.ones(n))

    @property
    def n_outliers(self) -> int:
        return int((~self.is_inlier).sum())


def random_pose(rng: np.random.Generator) -> RelativePose:
    axis = rng.normal(size=3)
    angle = np.deg2rad(rng.uniform(5.0, 15.0))
    R = Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()
    # mostly sideways motion keeps parallax healthy without pushing points out of view
    t = np.array([rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0),
                  rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)])
    return RelativePose.from_rt(R, t)


def _random_plane(rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """A plane n.X = d facing the first camera, tilted 20-40 degrees."""
    tilt = np.deg2rad(rng.uniform(20.0, 40.0))
    phi = rng.uniform(0.0, 2 * np.pi)
    axis = np.array([np.cos(phi), np.sin(phi), 0.0])
    n = Rotation.from_rotvec(axis * tilt).apply([0.0, 0.0, 1.0])
    d = rng.uniform(5.0, 7.0)
    return n, d


def _project(K: np.ndarray, X: np.ndarray) -> np.ndarray:
    p = X @ K.T
    return p[:, :2] / p[:, 2:3]


def _visible(x: np.ndarray, X: np.ndarray, size) -> np.ndarray:
    w, h = size
    return (X[:, 2] > 0.5) & (x[:, 0] >= 0) & (x[:, 0] <= w - 1) & (x[:, 1] >= 0) & (x[:, 1] <= h - 1)


def generate(spec: SceneSpec) -> Scene:
    """Sample a scene; inliers obey the returned F (and H for planar points) before noise."""
    rng = np.random.default_rng(spec.rng_seed)
    pose = spec.pose if spec.pose is not None else random_pose(rng)
    R, t = pose.rotation, pose.translation
    K = spec.intrinsics.matrix
    Kinv = np.linalg.inv(K)
    w, h = spec.image_size
    n = spec.n_points

    plane_n, plane_d = _random_plane(rng) if spec.structure != RANDOM_CLOUD else (None, None)
    if spec.structure == SINGLE_PLANE:
        n_plane = n
    elif spec.structure == PLANE_DOMINANT:
        n_plane = n - int(round(spec.off_plane_fraction * n))
    else:
        n_plane = 0

    def sample(count: int, planar: bool) -> np.ndarray:
        uv = np.column_stack([rng.uniform(0, w - 1, count), rng.uniform(0, h - 1, count)])
        rays = np.column_stack([uv, np.ones(count)]) @ Kinv.T
        if planar:
            depth = plane_d / (rays @ plane_n)
        elif plane_n is not None:
            # slab behind the dominant plane
            depth = plane_d / (rays @ plane_n) + rng.uniform(1.0, 4.0, count)
        else:
            depth = rng.uniform(4.0, 10.0, count)
        return rays * depth[:, None]

    def fill(count: int, planar: bool) -> np.ndarray:
        out = np.zeros((0, 3))
        for _ in range(_MAX_ATTEMPTS):
            need = count - len(out)
            if need <= 0:
                break
            X = sample(2 * need + 8, planar)
            X2 = X @ R.T + t
            ok = (X[:, 2] > 0.5) & _visible(_project(K, X2), X2, spec.image_size)
            out = np.vstack([out, X[ok][:need]])
        if len(out) < count:
            raise ProjectionFailed(f"only {len(out)} of {count} points visible in both views")
        return out

    X1 = np.vstack([fill(n_plane, True), fill(n - n_plane, False)])
    on_plane = np.zeros(n, dtype=bool)
    on_plane[:n_plane] = True
    x1 = _project(K, X1)
    x2 = _project(K, X1 @ R.T + t)

    if spec.noise_px > 0:
        # correspondence noise lives on the image-2 observation; x1 stays exact
        x2 = x2 + rng.normal(scale=spec.noise_px, size=x2.shape)

    n_out = int(round(spec.outlier_fraction * n))
    is_inlier = np.ones(n, dtype=bool)
    if n_out:
        out_idx = rng.choice(n, size=n_out, replace=False)
        is_inlier[out_idx] = False
        x2[out_idx] = np.column_stack([rng.uniform(0, w - 1, n_out), rng.uniform(0, h - 1, n_out)])

    H = None
    if plane_n is not None:
        H = K @ (R + np.outer(t, plane_n) / plane_d) @ Kinv
        H = H / H[2, 2]

    return Scene(
        x1=x1, x2=x2, is_inlier=is_inlier, pose=pose,
        F=fundamental_from_pose(R, t, spec.intrinsics, spec.intrinsics),
        H=H, on_plane=on_plane, points3d=X1,
        K1=spec.intrinsics, K2=spec.intrinsics, image_size=spec.image_size, spec=spec,
    )


def descriptors_for(is_inlier: np.ndarray, dim: int, corruption: float, rng_seed: int = 0):
    """Descriptor pairs for a scene's correspondences (row i of A matches row i of B).

    Inlier pairs share a random unit base vector; the image-B copy gets per-component
    Gaussian noise of std ``corruption`` and is renormalized. Outlier rows in B get
    independent vectors.
    """
    if dim < 8:
        raise ValueError("descriptor dim must be >= 8")
    is_inlier = np.asarray(is_inlier, dtype=bool)
    rng = np.random.default_rng(rng_seed)
    n = len(is_inlier)
    a = rng.normal(size=(n, dim))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = a + corruption * rng.normal(size=(n, dim))
    fresh = rng.normal(size=(n, dim))
    b[~is_inlier] = fresh[~is_inlier]
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return a.astype(np.float32), b.astype(np.float32)

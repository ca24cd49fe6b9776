import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoview.errors import ProjectionFailed
from twoview.geometry import RelativePose
from twoview.matching import match_mutual_nn
from twoview.synthetic import (PLANE_DOMINANT, RANDOM_CLOUD, SINGLE_PLANE, SceneSpec, descriptors_for,
                               generate)


def project(K, X):
    p = X @ K.T
    return p[:, :2] / p[:, 2:]


def homog(x):
    return np.column_stack([x, np.ones(len(x))])


def test_single_plane_obeys_h():
    s = generate(SceneSpec(SINGLE_PLANE, rng_seed=1))
    y = homog(s.x1) @ s.H.T
    assert np.abs(y[:, :2] / y[:, 2:] - s.x2).max() < 1e-9


def test_random_cloud_obeys_f():
    s = generate(SceneSpec(RANDOM_CLOUD, rng_seed=2))
    F = s.F / np.linalg.norm(s.F)
    r = np.einsum("ni,ij,nj->n", homog(s.x2), F, homog(s.x1))
    assert np.abs(r).max() < 1e-9


def test_exact_outlier_count():
    s = generate(SceneSpec(n_points=200, outlier_fraction=0.3, rng_seed=3))
    assert s.n_outliers == 60


def test_points_reproject_from_structure():
    # an independent check of the claimed pose: re-project the exported 3D points
    s = generate(SceneSpec(PLANE_DOMINANT, rng_seed=4))
    K = s.K1.matrix
    np.testing.assert_allclose(project(K, s.points3d), s.x1, atol=1e-9)
    X2 = s.points3d @ s.pose.rotation.T + s.pose.translation
    np.testing.assert_allclose(project(K, X2), s.x2, atol=1e-9)
    assert (s.points3d[:, 2] > 0).all() and (X2[:, 2] > 0).all()


def test_plane_dominant_split():
    s = generate(SceneSpec(PLANE_DOMINANT, n_points=200, off_plane_fraction=0.1, rng_seed=5))
    assert s.on_plane.sum() == 180
    y = homog(s.x1) @ s.H.T
    d = np.linalg.norm(y[:, :2] / y[:, 2:] - s.x2, axis=1)
    assert d[s.on_plane].max() < 1e-9
    assert d[~s.on_plane].min() > 1.0  # the slab sits behind the plane, so parallax is real


def test_deterministic_per_seed():
    a = generate(SceneSpec(noise_px=1.0, outlier_fraction=0.2, rng_seed=9))
    b = generate(SceneSpec(noise_px=1.0, outlier_fraction=0.2, rng_seed=9))
    np.testing.assert_array_equal(a.x1, b.x1)
    np.testing.assert_array_equal(a.x2, b.x2)
    np.testing.assert_array_equal(a.is_inlier, b.is_inlier)


def test_fixed_pose_is_used():
    pose = RelativePose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    s = generate(SceneSpec(pose=pose, rng_seed=0))
    np.testing.assert_array_equal(s.pose.translation, pose.translation)


def test_projection_failure():
    # the second camera faces backwards, so no point can be in front of both
    pose = RelativePose(np.diag([-1.0, 1.0, -1.0]), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ProjectionFailed):
        generate(SceneSpec(pose=pose, n_points=20, rng_seed=0))


@pytest.mark.parametrize("bad", [dict(n_points=7), dict(outlier_fraction=1.0), dict(structure="cube"),
                                 dict(noise_px=-1.0)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        SceneSpec(**bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([RANDOM_CLOUD, SINGLE_PLANE, PLANE_DOMINANT]),
       st.floats(0.0, 0.5))
def test_inliers_satisfy_truth_before_noise(seed, structure, outliers):
    s = generate(SceneSpec(structure, n_points=60, outlier_fraction=outliers, rng_seed=seed))
    F = s.F / np.linalg.norm(s.F)
    r = np.einsum("ni,ij,nj->n", homog(s.x2), F, homog(s.x1))
    assert np.abs(r[s.is_inlier]).max() < 1e-9
    w, h = s.image_size
    assert ((s.x1 >= 0) & (s.x1 <= [w - 1, h - 1])).all()
    assert ((s.x2 >= 0) & (s.x2 <= [w - 1, h - 1])).all()
    assert s.n_outliers == int(round(outliers * 60))


# --- descriptors -----------------------------------------------------------

def test_zero_corruption_recovers_inliers():
    s = generate(SceneSpec(n_points=200, outlier_fraction=0.3, rng_seed=1))
    a, b = descriptors_for(s.is_inlier, 128, 0.0, rng_seed=1)
    found = match_mutual_nn(a, b).pairs()
    truth = {(i, i) for i in np.flatnonzero(s.is_inlier).tolist()}
    assert truth <= found
    # an outlier row can only pair up by chance with another independent vector
    assert len(found - truth) <= s.n_outliers


def test_heavy_corruption_degrades_recall():
    n = 200
    a, b = descriptors_for(np.ones(n, bool), 128, 1.5, rng_seed=2)
    found = match_mutual_nn(a, b).pairs()
    recall = len(found & {(i, i) for i in range(n)}) / n
    assert recall < 0.5


def test_unit_norm_rows():
    a, b = descriptors_for(np.ones(100, bool), 128, 0.3, rng_seed=3)
    assert np.abs(np.linalg.norm(a, axis=1) - 1).max() < 1e-6
    assert np.abs(np.linalg.norm(b, axis=1) - 1).max() < 1e-6


def test_dim_too_small():
    with pytest.raises(ValueError):
        descriptors_for(np.ones(10, bool), 4, 0.1)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from twoview.errors import EmptyInput
from twoview.evaluation import PoseError, aggregate, exact_auc, format_auc_table, pose_error
from twoview.geometry import RelativePose


def grid_auc(errors, T, step=1e-4):
    """Midpoint-rule integral of the recall step function on [0, T]."""
    t = (np.arange(int(round(T / step))) + 0.5) * step
    e = np.sort(np.asarray(errors, float))
    recall = np.searchsorted(e, t, side="right") / len(e)
    return recall.sum() * step / T


def random_pose(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.normal(size=3)
    return RelativePose.from_rt(R, t)


# --- pose error ------------------------------------------------------------

def test_identical_poses():
    p = random_pose(np.random.default_rng(0))
    e = pose_error(p, p)
    assert e.rotation_error == pytest.approx(0.0, abs=1e-6)
    assert e.translation_angle_error == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_ten_degree_rotation(seed):
    rng = np.random.default_rng(seed)
    p = random_pose(rng)
    axis = rng.normal(size=3)
    dR = Rotation.from_rotvec(axis / np.linalg.norm(axis) * np.deg2rad(10)).as_matrix()
    q = RelativePose(dR @ p.rotation, p.translation)
    e = pose_error(q, p)
    assert e.rotation_error == pytest.approx(10.0, abs=1e-9)
    assert e.translation_angle_error == pytest.approx(0.0, abs=1e-6)


def test_flipped_translation_is_zero_error():
    p = random_pose(np.random.default_rng(3))
    e = pose_error(RelativePose(p.rotation, -p.translation), p)
    assert e.translation_angle_error == pytest.approx(0.0, abs=1e-6)


def test_combined_is_max():
    assert PoseError(3.0, 7.0).combined == 7.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_pose_error_range_and_rotation_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    e1, e2 = pose_error(a, b), pose_error(b, a)
    assert e1.rotation_error == pytest.approx(e2.rotation_error, abs=1e-9)
    for e in (e1, e2):
        assert 0 <= e.rotation_error <= 180 and 0 <= e.translation_angle_error <= 90


# --- exact AUC -------------------------------------------------------------

def test_all_zero_errors():
    assert exact_auc([0.0] * 7) == {5.0: 1.0, 10.0: 1.0, 20.0: 1.0}


def test_single_error_at_threshold():
    assert exact_auc([10.0], [10.0])[10.0] == 0.0


def test_grid_example():
    e = [1, 3, 7, 50]
    assert abs(exact_auc(e, [10.0])[10.0] - grid_auc(e, 10.0)) < 1e-3


def test_empty_raises():
    with pytest.raises(EmptyInput):
        exact_auc([])


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        exact_auc([1.0, np.inf])


def test_aggregate_uses_max_component():
    out = aggregate([PoseError(1.0, 6.0), PoseError(0.0, 0.0)], [5.0])
    assert out[5.0] == pytest.approx(0.5)


def test_table_layout():
    text = format_auc_table({5.0: 0.3872, 10.0: 0.5913, 20.0: 0.7581}, "ours")
    head, row = text.splitlines()
    assert head.split() == ["AUC@5", "AUC@10", "AUC@20"]
    assert row.split() == ["ours", "38.72", "59.13", "75.81"]
    assert len(head) == len(row)


errors_st = st.lists(st.floats(0.0, 60.0, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(errors_st)
def test_auc_matches_hinge_form(errors):
    e = np.asarray(errors)
    for T, v in exact_auc(e).items():
        assert abs(v - np.maximum(0.0, 1.0 - e / T).mean()) < 1e-12
        assert 0.0 <= v <= 1.0


@settings(max_examples=100, deadline=None)
@given(errors_st, st.integers(0, 39), st.floats(0.0, 30.0))
def test_auc_non_increasing_in_each_error(errors, k, bump):
    e = np.asarray(errors)
    worse = e.copy()
    worse[k % len(e)] += bump
    before, after = exact_auc(e), exact_auc(worse)
    assert all(after[T] <= before[T] + 1e-15 for T in before)


@settings(max_examples=100, deadline=None)
@given(errors_st)
def test_auc_order_invariant(errors):
    e = np.asarray(errors)
    assert exact_auc(e) == exact_auc(e[::-1])

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoview.errors import MissingLevel, NonInvertible
from twoview.pyramid import (ALL, MAX, NONE, ORIENTATION, ORIENTATIONS, SCALE, PyramidSpec, build_warps,
                             concat_descriptors, guided_pyramid_match, map_keypoints, map_keypoints_back,
                             merge_matches)
from twoview.types import Keypoints, MatchSet

SIZE = (64, 48)


def all_warps(size=SIZE):
    return build_warps(PyramidSpec(SCALE), size) + build_warps(PyramidSpec(ORIENTATION), size)


def grid(w, h):
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    return np.column_stack([xs.ravel(), ys.ravel()]).astype(float)


# --- PyramidSpec ---------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(scale_factors=(0.5, 2.0)), dict(orientations=("rot+90",)),
                                dict(mode="pyramid"), dict(combine="any"), dict(guided_trigger_matches=-1)])
def test_pyramid_spec_invariants(kw):
    with pytest.raises(ValueError):
        PyramidSpec(**kw)


def test_default_levels():
    assert [w.name for w in build_warps(PyramidSpec(SCALE), SIZE)] == ["scale_0.5", "scale_1", "scale_2"]
    assert [w.name for w in build_warps(PyramidSpec(ORIENTATION), SIZE)] == list(ORIENTATIONS)
    assert [w.name for w in build_warps(PyramidSpec(NONE), SIZE)] == ["identity"]


# --- warps -----------------------------------------------------------------

def test_rotate_plus_90_corner():
    W, H = SIZE
    warp = {w.name: w for w in build_warps(PyramidSpec(ORIENTATION), SIZE)}["rot+90"]
    out = map_keypoints(Keypoints([[0.0, 0.0]], [1.0]), warp.matrix)
    np.testing.assert_allclose(out.xy, [[H - 1, 0]], atol=1e-12)
    assert warp.size == (H, W)


def test_identity_warp_is_identity():
    warp = build_warps(PyramidSpec(ORIENTATION), SIZE)[0]
    x = np.random.default_rng(0).uniform(0, 40, (20, 2))
    np.testing.assert_array_equal(map_keypoints(Keypoints(x, np.ones(20)), warp.matrix).xy, x)


@pytest.mark.parametrize("warp", all_warps(), ids=lambda w: w.name)
def test_warp_round_trip(warp):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 47, (100, 2))
    M = warp.matrix
    np.testing.assert_allclose(M @ np.linalg.inv(M), np.eye(3), atol=1e-10)
    kps = Keypoints(x, np.ones(100))
    back = map_keypoints_back(map_keypoints(kps, M), warp)
    np.testing.assert_allclose(back.xy, x, atol=1e-9)


@pytest.mark.parametrize("warp", all_warps(), ids=lambda w: w.name)
def test_warp_maps_image_into_its_frame(warp):
    W, H = SIZE
    corners = np.array([[0, 0], [W - 1, 0], [0, H - 1], [W - 1, H - 1]], float)
    out = map_keypoints(Keypoints(corners, np.ones(4)), warp.matrix, warp.size)
    assert out.in_bounds.all()
    assert out.xy.min() > -1e-9


@pytest.mark.parametrize("name,axis,sign", [("tilt_left", 0, -1), ("tilt_right", 0, 1),
                                            ("tilt_up", 1, -1), ("tilt_down", 1, 1)])
def test_tilt_is_rotated_image_plane(name, axis, sign):
    # oracle: put the centred image on the plane z = f, turn that plane 45 degrees about its
    # central axis, and reproject; the warp may differ from this only by the anchoring shift
    W, H = SIZE
    f = max(W, H)
    warp = {w.name: w for w in build_warps(PyramidSpec(ORIENTATION), SIZE)}[name]
    x = np.random.default_rng(2).uniform(0, 40, (30, 2))
    c = x - [(W - 1) / 2, (H - 1) / 2]
    a = np.radians(45)
    u = c[:, axis]
    P = np.column_stack([c, np.full(len(c), float(f))])
    P[:, axis] = u * np.cos(a)
    P[:, 2] = f + sign * u * np.sin(a)
    ref = f * P[:, :2] / P[:, 2:]
    ours = map_keypoints(Keypoints(x, np.ones(30)), warp.matrix).xy
    shift = ours - ref
    np.testing.assert_allclose(shift, np.broadcast_to(shift[0], shift.shape), atol=1e-9)


def test_map_back_identity_unchanged():
    kps = Keypoints([[1.5, 2.5], [3.0, 4.0]], [0.1, 0.2], np.eye(2, dtype=np.float32))
    out = map_keypoints_back(kps, np.eye(3))
    np.testing.assert_array_equal(out.xy, kps.xy)
    np.testing.assert_array_equal(out.scores, kps.scores)
    np.testing.assert_array_equal(out.descriptors, kps.descriptors)


def test_map_back_rotated_grid_is_permutation():
    W, H = SIZE
    warp = {w.name: w for w in build_warps(PyramidSpec(ORIENTATION), SIZE)}["rot+90"]
    src = grid(W, H)
    fwd = map_keypoints(Keypoints(src, np.ones(len(src))), warp.matrix).xy
    # the image of the grid is exactly the target grid, in another order
    target = grid(*warp.size)
    assert sorted(map(tuple, np.round(fwd, 9))) == sorted(map(tuple, target))
    back = map_keypoints_back(Keypoints(target, np.ones(len(target))), warp).xy
    assert sorted(map(tuple, np.round(back, 9))) == sorted(map(tuple, src))


def test_map_back_flags_out_of_bounds():
    warp = build_warps(PyramidSpec(SCALE), SIZE)[2]  # scale 2
    kps = Keypoints([[10.0, 10.0], [200.0, 10.0]], [1.0, 1.0])
    out = map_keypoints_back(kps, warp, SIZE)
    assert out.in_bounds.tolist() == [True, False]
    assert out.xy[1, 0] == pytest.approx(100.0)  # flagged, not clamped


def test_map_back_singular_raises():
    with pytest.raises(NonInvertible):
        map_keypoints_back(Keypoints([[1.0, 1.0]], [1.0]), np.diag([1.0, 0.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(all_warps((40, 30))))
def test_back_mapped_points_in_bounds_or_flagged(seed, warp):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-20, 80, (30, 2))
    out = map_keypoints_back(Keypoints(x, np.ones(30)), warp, (40, 30))
    inside = (out.xy[:, 0] >= 0) & (out.xy[:, 0] <= 39) & (out.xy[:, 1] >= 0) & (out.xy[:, 1] <= 29)
    assert (inside | ~out.in_bounds).all()


# --- descriptors -----------------------------------------------------------

def test_concat_three_identical():
    v = np.random.default_rng(0).normal(size=16)
    v /= np.linalg.norm(v)
    out = concat_descriptors([v, v, v])
    assert out.shape == (48,) and abs(np.linalg.norm(out) - 1) < 1e-6


def test_concat_basis_vectors():
    np.testing.assert_allclose(concat_descriptors([[1.0, 0.0], [0.0, 1.0]]), np.array([1, 0, 0, 1]) / np.sqrt(2),
                               atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 64))
def test_concat_unit_norm(seed, levels, dim):
    rng = np.random.default_rng(seed)
    out = concat_descriptors([rng.normal(size=dim) for _ in range(levels)])
    assert abs(np.linalg.norm(out) - 1) < 1e-6


def test_concat_missing_level():
    with pytest.raises(MissingLevel):
        concat_descriptors([np.ones(4), None])


# --- merging ---------------------------------------------------------------

def ms(pairs, conf=None, level="x"):
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return MatchSet(pairs[:, 0], pairs[:, 1], conf, level)


def test_merge_single_set_unchanged():
    a = ms([[0, 1], [2, 3]], [0.9, 0.8])
    assert merge_matches([a], MAX) is a
    m = merge_matches([a], ALL)
    assert m.pairs() == a.pairs()
    np.testing.assert_array_equal(m.confidence, a.confidence)


def test_merge_max_largest():
    sets = [ms([[i, i] for i in range(n)]) for n in (10, 25, 7)]
    assert merge_matches(sets, MAX) is sets[1]
    tie = [ms([[0, 0]]), ms([[1, 1]])]
    assert merge_matches(tie, MAX) is tie[0]


def test_merge_all_shared_pairs_take_max_confidence():
    a = ms([[0, 0], [1, 1], [2, 2], [5, 6]], [0.3, 0.9, 0.5, 0.4])
    b = ms([[0, 0], [1, 1], [2, 2], [7, 8]], [0.6, 0.2, 0.5, 0.7])
    m = merge_matches([a, b], ALL)
    conf = dict(zip(zip(m.idx_a.tolist(), m.idx_b.tolist()), m.confidence.tolist()))
    assert conf == {(0, 0): 0.6, (1, 1): 0.9, (2, 2): 0.5, (5, 6): 0.4, (7, 8): 0.7}


def test_merge_all_one_to_one_greedy():
    a = ms([[0, 0], [0, 1], [1, 1]], [0.9, 0.8, 0.7])
    m = merge_matches([a], ALL)
    assert m.pairs() == {(0, 0), (1, 1)}


match_sets = st.lists(
    st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=15, unique=True), min_size=1, max_size=4)


def random_sets(draw_pairs, seed):
    rng = np.random.default_rng(seed)
    # distinct confidences, so no tie rule is involved in the permutation test
    confs = rng.permutation(1000)[:sum(len(p) for p in draw_pairs)] / 1000.0
    out, k = [], 0
    for p in draw_pairs:
        out.append(ms(p, confs[k:k + len(p)]) if p else MatchSet.empty())
        k += len(p)
    return out


@settings(max_examples=100, deadline=None)
@given(match_sets, st.integers(0, 1000))
def test_merge_all_properties(pairs, seed):
    sets = random_sets(pairs, seed)
    m = merge_matches(sets, ALL)
    # one-to-one
    assert len(set(m.idx_a.tolist())) == len(m) and len(set(m.idx_b.tolist())) == len(m)
    # idempotent
    again = merge_matches([m], ALL)
    assert again.pairs() == m.pairs()
    np.testing.assert_array_equal(again.confidence, m.confidence)
    # order-insensitive
    for perm in itertools.islice(itertools.permutations(sets), 6):
        other = merge_matches(list(perm), ALL)
        np.testing.assert_array_equal(other.idx_a, m.idx_a)
        np.testing.assert_array_equal(other.idx_b, m.idx_b)
        np.testing.assert_array_equal(other.confidence, m.confidence)
    # MAX cardinality
    assert len(merge_matches(sets, MAX)) == max(len(s) for s in sets)


# --- guided trigger --------------------------------------------------------

class CountingMatcher:
    def __init__(self, result=None):
        self.calls = []
        self.result = result

    def __call__(self, wa, wb):
        self.calls.append((wa.name, wb.name))
        return self.result if self.result is not None else MatchSet.empty()


def base_of(n):
    return ms([[i, i] for i in range(n)], np.full(n, 0.5))


def test_trigger_150_keeps_base():
    m = CountingMatcher()
    b = base_of(150)
    assert guided_pyramid_match(b, PyramidSpec(), m, SIZE) is b
    assert m.calls == []


@pytest.mark.parametrize("n,taken", [(99, True), (100, False)])
def test_trigger_boundary(n, taken):
    m = CountingMatcher(base_of(120))
    out = guided_pyramid_match(base_of(n), PyramidSpec(), m, SIZE)
    assert bool(m.calls) == taken
    assert len(m.calls) == (9 if taken else 0)
    assert len(out) == (120 if taken else n)


def test_trigger_all_empty():
    m = CountingMatcher()
    out = guided_pyramid_match(MatchSet.empty(), PyramidSpec(), m, SIZE)
    assert len(out) == 0 and len(m.calls) == 9


def test_trigger_zero_is_vacuous():
    m = CountingMatcher()
    b = MatchSet.empty()
    assert guided_pyramid_match(b, PyramidSpec(guided_trigger_matches=0), m, SIZE) is b
    assert m.calls == []


def test_matcher_errors_propagate():
    def boom(wa, wb):
        raise RuntimeError("matcher failed")

    with pytest.raises(RuntimeError):
        guided_pyramid_match(MatchSet.empty(), PyramidSpec(), boom, SIZE)

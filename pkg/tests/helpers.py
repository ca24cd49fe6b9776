"""Oracles shared by the test modules."""
import numpy as np

from twoview.geometry import RelativePose
from twoview.keypoints import BICYCLE, BUS, CAR, EROSION_SIZE, KEEP, PERSON, SKY
from twoview.synthetic import SceneSpec, generate


def scene(structure="random_cloud", n=200, noise=0.0, outliers=0.0, seed=0, **kw):
    return generate(SceneSpec(structure, n, noise, outliers, rng_seed=seed, **kw))


def random_homography(rng, w=1024, h=768):
    """A well-conditioned homography keeping the image roughly in view."""
    src = np.array([[0, 0], [w, 0], [w, h], [0, h]], float)
    dst = src + rng.uniform(-0.15, 0.15, size=(4, 2)) * [w, h]
    A = []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    return np.linalg.svd(np.array(A))[2][-1].reshape(3, 3)


def apply_h(H, x):
    p = np.column_stack([x, np.ones(len(x))]) @ np.asarray(H).T
    return p[:, :2] / p[:, 2:]


def angle_between_rotations(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1) / 2
    return float(np.arccos(np.clip(c, -1, 1)))


def angle_between_directions(a, b):
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1, 1)))


def pose(R, t):
    return RelativePose.from_rt(R, t)


def brute_force_nms(s, window, thr):
    """Every pixel compared against every neighbour, one offset at a time."""
    H, W = s.shape
    keep = s >= thr
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            if (dy == 0 and dx == 0) or abs(dy) >= H or abs(dx) >= W:
                continue
            nb = np.full_like(s, -np.inf)
            ys, yd = slice(max(0, dy), H + min(0, dy)), slice(max(0, -dy), H + min(0, -dy))
            xs, xd = slice(max(0, dx), W + min(0, dx)), slice(max(0, -dx), W + min(0, -dx))
            nb[yd, xd] = s[ys, xs]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            # a neighbour beats p if larger, or equal and earlier in row-major order
            keep &= ~((nb > s) | ((nb == s) & earlier))
    rows, cols = np.nonzero(keep)
    sc = s[rows, cols]
    order = sorted(range(len(rows)), key=lambda k: (-sc[k], rows[k], cols[k]))
    return np.array([[cols[k], rows[k]] for k in order], dtype=float).reshape(-1, 2)


def brute_force_erosion(mask):
    H, W = mask.shape
    out = np.zeros(mask.shape, bool)
    for y in range(H):
        for x in range(W):
            c = int(mask[y, x])
            if c == KEEP:
                continue
            r = EROSION_SIZE[c] // 2
            ok = True
            for yy in range(y - r, y + r + 1):
                for xx in range(x - r, x + r + 1):
                    if not (0 <= yy < H and 0 <= xx < W) or mask[yy, xx] != c:
                        ok = False
            out[y, x] = ok
    return out


def random_map(rng, h, w):
    s = rng.random((h, w))
    if rng.random() < 0.5:
        # coarse levels create plateaus and ties
        s = np.floor(s * rng.integers(2, 6)) / 5.0
    s[rng.random((h, w)) < 0.2] = 0.0
    return s


def random_mask(rng, h, w):
    mask = np.zeros((h, w), np.uint8)
    for _ in range(int(rng.integers(1, 8))):
        y, x = rng.integers(0, h), rng.integers(0, w)
        bh, bw = rng.integers(1, 12, 2)
        mask[y:y + bh, x:x + bw] = rng.choice([PERSON, SKY, CAR, BUS, BICYCLE])
    return mask

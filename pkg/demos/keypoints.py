"""Keypoint post-processing on a synthetic score map.

NMS picks local maxima and argsoftmax moves them to sub-pixel positions. The
eroded class mask then drops points inside masked objects but keeps those near their edges.

Run: python3 demos/keypoints.py
"""
import numpy as np

from twoview.keypoints import CAR, SKY, erode_and_filter, nms, refine_keypoints, select_top_k


def main():
    rng = np.random.default_rng(0)
    h, w = 120, 160
    centres = rng.uniform([5, 5], [w - 5, h - 5], (40, 2))
    ys, xs = np.mgrid[0:h, 0:w]
    score = np.zeros((h, w))
    for cx, cy in centres:
        score = np.maximum(score, np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 1.5 ** 2)))

    kps = nms(score, 4, 0.0005)
    refined = refine_keypoints(score, kps, radius=2, tau=0.1)
    # pair each refined point with its true centre
    d_int = np.linalg.norm(kps.xy[:, None] - centres[None], axis=2).min(axis=1)
    d_sub = np.linalg.norm(refined.xy[:, None] - centres[None], axis=2).min(axis=1)
    print(f"{len(kps)} maxima; mean distance to true peak: integer {d_int.mean():.3f} px, "
          f"refined {d_sub.mean():.3f} px")

    mask = np.zeros((h, w), np.uint8)
    mask[:30] = SKY
    mask[70:110, 20:80] = CAR
    kept = erode_and_filter(refined, mask)
    top = select_top_k(kept, 5)
    print(f"mask filter keeps {len(kept)} of {len(refined)}; best scores {np.round(top.scores, 3)}")


if __name__ == "__main__":
    main()

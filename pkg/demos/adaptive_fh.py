"""Adaptive F/H selection on a planar scene and on a general 3D scene.

Run: python3 demos/adaptive_fh.py [--seeds 10]
"""
import argparse

from twoview.robust import RansacConfig, adaptive_fh
from twoview.synthetic import SceneSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    print(f"{'structure':<14}{'seed':>5}{'SF':>10}{'SH':>10}{'RH':>8}  chosen")
    for structure in ("single_plane", "random_cloud"):
        for seed in range(args.seeds):
            s = generate(SceneSpec(structure, 200, noise_px=1.0, outlier_fraction=0.1, rng_seed=seed))
            r = adaptive_fh(s.x1, s.x2, RansacConfig(rng_seed=seed))
            print(f"{structure:<14}{seed:>5}{r.sf:>10.1f}{r.sh:>10.1f}{r.rh:>8.3f}  {r.chosen}")


if __name__ == "__main__":
    main()

"""Command-line entry point: synth, process, match, estimate, evaluate.

Every command writes only its declared outputs. Input or format problems end
with exit status 1 and one line on stderr: ``error<TAB>Kind<TAB>message``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import io
from .config import STEREO, TASKS, PipelineConfig, default_config, load_config
from .errors import ConfigError, NoModelFound, NotEnoughCorrespondences, TwoViewError
from .evaluation import AUC_THRESHOLDS, exact_auc, format_auc_table, pose_error
from .geometry import CameraIntrinsics, RelativePose, recover_pose_from_f
from .keypoints import erode_and_filter, estimate_nms_window, nms, nms_points, refine_keypoints, select_top_k
from .matching import match_mutual_nn
from .pyramid import build_warps, guided_pyramid_match, map_keypoints_back
from .robust import FUNDAMENTAL, HOMOGRAPHY, adaptive_fh, ransac_fundamental
from .synthetic import DEFAULT_INTRINSICS, STRUCTURES, SceneSpec, descriptors_for, generate
from .types import Keypoints, MatchSet

LEVEL_SNAP_PX = 1.0
_FAILED_ERROR_DEG = 180.0


class UsageError(TwoViewError):
    pass


def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else default_config()


def _seed(args, cfg: PipelineConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "structure": "random_cloud", "n_points": 200, "noise_px": 0.5, "outlier_fraction": 0.1,
    "off_plane_fraction": 0.1, "pairs": 1, "rng_seed": 0, "descriptor_dim": 128,
    "descriptor_noise": 0.05, "image_size": [1024, 768], "intrinsics": None, "pyramid_levels": False,
}


def _synth_spec(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected an object")
    for k in raw:
        if k not in _SYNTH_DEFAULTS:
            raise ConfigError(k, "unknown key")
    spec = {**_SYNTH_DEFAULTS, **raw}
    if spec["structure"] not in STRUCTURES:
        raise ConfigError("structure", f"not one of {list(STRUCTURES)}")
    if not isinstance(spec["pairs"], int) or not 1 <= spec["pairs"] <= 100_000:
        raise ConfigError("pairs", "expected an integer in [1, 100000]")
    if not isinstance(spec["descriptor_dim"], int) or not 8 <= spec["descriptor_dim"] <= 4096:
        raise ConfigError("descriptor_dim", "expected an integer in [8, 4096]")
    return spec


def _pair_name(k: int) -> str:
    return f"pair_{k:04d}"


def _scene_outputs(spec: dict, k: int):
    seed = int(spec["rng_seed"]) + k
    K = DEFAULT_INTRINSICS if spec["intrinsics"] is None else CameraIntrinsics(**spec["intrinsics"])
    try:
        scene = generate(SceneSpec(spec["structure"], spec["n_points"], spec["noise_px"],
                                   spec["outlier_fraction"], spec["off_plane_fraction"],
                                   intrinsics=K, image_size=tuple(spec["image_size"]), rng_seed=seed))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TwoViewError):
            raise
        raise ConfigError("<spec>", str(exc)) from None
    da, db = descriptors_for(scene.is_inlier, spec["descriptor_dim"], spec["descriptor_noise"], seed)
    rng = np.random.default_rng([seed, 1])
    n = len(scene.x1)
    perm = rng.permutation(n)  # row r of image B holds correspondence perm[r]
    kp_a = Keypoints(scene.x1, rng.uniform(0.5, 1.0, n), da)
    kp_b = Keypoints(scene.x2[perm], rng.uniform(0.5, 1.0, n), db[perm])
    where_b = np.argsort(perm)
    truth_a = np.flatnonzero(scene.is_inlier)
    truth = {
        "pair": _pair_name(k), "seed": seed, "structure": spec["structure"],
        "image_size": list(scene.image_size),
        "rotation": scene.pose.rotation.tolist(), "translation": scene.pose.translation.tolist(),
        "F": scene.F.tolist(), "H": None if scene.H is None else scene.H.tolist(),
        "matches": [[int(i), int(where_b[i])] for i in truth_a],
    }
    intr = {"K1": _k_dict(scene.K1), "K2": _k_dict(scene.K2), "image_size": list(scene.image_size)}
    # the noise-free descriptor behind each row; image-A rows carry it exactly
    latent_b = np.where(scene.is_inlier[:, None], da, db)[perm]
    return scene, kp_a, kp_b, truth, intr, latent_b


def _k_dict(K: CameraIntrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}


def cmd_synth(args) -> int:
    spec = _synth_spec(io.read_json(args.spec))
    out = Path(args.out)
    for k in range(spec["pairs"]):
        name = _pair_name(k)
        scene, kp_a, kp_b, truth, intr, latent_b = _scene_outputs(spec, k)
        io.write_features(out / "features" / f"{name}_a.tvgf", kp_a)
        io.write_features(out / "features" / f"{name}_b.tvgf", kp_b)
        io.write_json(out / "truth" / f"{name}.json", truth)
        pairs = np.array(truth["matches"], dtype=np.int64).reshape(-1, 2)
        io.write_matches(out / "truth" / f"{name}.tvgm",
                         MatchSet(pairs[:, 0], pairs[:, 1], np.ones(len(pairs))))
        io.write_json(out / "intrinsics" / f"{name}.json", intr)
        if spec["pyramid_levels"]:
            _write_levels(out / "features", name, (kp_a, kp_a.descriptors), (kp_b, latent_b),
                          tuple(spec["image_size"]), spec, k)
    return 0


def _write_levels(folder: Path, name: str, side_a, side_b, size, spec, k) -> None:
    """Per-level features for the default scale pyramid.

    Each level re-observes the latent descriptors with fresh noise of std
    descriptor_noise / sqrt(2) per side, so a level pair is as informative as the
    base pair but independent of it.
    """
    from .pyramid import PyramidSpec, map_keypoints

    rng = np.random.default_rng([int(spec["rng_seed"]) + k, 2])
    sigma = spec["descriptor_noise"] / np.sqrt(2.0)
    for side, (kps, latent) in (("a", side_a), ("b", side_b)):
        for warp in build_warps(PyramidSpec(), size):
            if np.allclose(warp.matrix, np.eye(3)):
                continue  # the base file already is this level
            d = latent + sigma * rng.normal(size=latent.shape)
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            moved = map_keypoints(kps, warp.matrix)
            io.write_features(folder / f"{name}_{side}.{warp.name}.tvgf",
                              Keypoints(moved.xy, kps.scores, d.astype(np.float32)))


# ---------------------------------------------------------------------------
# process
# ---------------------------------------------------------------------------

def cmd_process(args) -> int:
    cfg = _config(args).dataset(args.dataset)
    score_map = io.read_score_map(args.score_map) if args.score_map else None
    if args.features:
        kps = io.read_features(args.features)
    elif score_map is not None:
        window = cfg.nms_window or estimate_nms_window(score_map.shape[::-1], cfg.keypoint_budget)
        kps = nms(score_map, window, cfg.keypoint_threshold)
    else:
        raise UsageError("process needs --features or --score-map")
    if args.features:
        kps = kps.subset(np.flatnonzero(kps.scores >= cfg.keypoint_threshold))
        if score_map is not None or cfg.nms_window is not None:
            window = cfg.nms_window or estimate_nms_window(score_map.shape[::-1], cfg.keypoint_budget)
            kps = nms_points(kps, window, cfg.keypoint_threshold)
    if score_map is not None and cfg.refine_radius > 0:
        kps = refine_keypoints(score_map, kps, cfg.refine_radius, cfg.refine_tau)
    kps = select_top_k(kps, cfg.keypoint_budget)
    if args.mask and cfg.mask_enabled:
        kps = erode_and_filter(kps, io.read_mask(args.mask))
    kps = select_top_k(kps, cfg.keypoints_after_mask)
    io.write_features(args.out, kps)
    return 0


# ---------------------------------------------------------------------------
# match
# ---------------------------------------------------------------------------

def _level_file(path: Path, level: str) -> Path:
    return path.with_name(f"{path.stem}.{level}{path.suffix}")


def _frame_size(kps: Keypoints, override) -> tuple[int, int]:
    if override:
        return tuple(override)
    if not len(kps):
        return (1, 1)
    hi = np.ceil(kps.xy.max(axis=0)).astype(int) + 1
    return int(hi[0]), int(hi[1])


def _snap_to_base(level: Keypoints, base: Keypoints) -> np.ndarray:
    """Index of the base keypoint within LEVEL_SNAP_PX of each back-mapped keypoint, or -1."""
    out = np.full(len(level), -1, dtype=np.int64)
    if not len(level) or not len(base):
        return out
    dist, idx = cKDTree(base.xy).query(level.xy, k=1, distance_upper_bound=LEVEL_SNAP_PX)
    ok = np.isfinite(dist) & level.in_bounds
    out[ok] = idx[ok]
    return out


def _level_matcher(path_a: Path, path_b: Path, kp_a: Keypoints, kp_b: Keypoints, size_a, size_b,
                   min_confidence: float, ratio):
    """Callback for guided matching: MNN on per-level features, expressed in base indices."""

    def load(path: Path, base: Keypoints, warp, size):
        if np.allclose(warp.matrix, np.eye(3)):
            return base, np.arange(len(base))
        f = _level_file(path, warp.name)
        if not f.exists():
            return None, None
        lvl = map_keypoints_back(io.read_features(f), warp, size)
        return lvl, _snap_to_base(lvl, base)

    def matcher(warp_a, warp_b) -> MatchSet:
        la, ia = load(path_a, kp_a, warp_a, size_a)
        lb, ib = load(path_b, kp_b, warp_b, size_b)
        if la is None or lb is None or la.descriptors is None or lb.descriptors is None:
            return MatchSet.empty(f"{warp_a.name}|{warp_b.name}")
        m = match_mutual_nn(la.descriptors, lb.descriptors, min_confidence, ratio)
        a, b = ia[m.idx_a], ib[m.idx_b]
        ok = (a >= 0) & (b >= 0)
        a, b, c = a[ok], b[ok], m.confidence[ok]
        # two level keypoints may snap to one base keypoint: keep the best pair
        order = np.lexsort((-c, b, a))
        a, b, c = a[order], b[order], c[order]
        first = np.ones(len(a), bool)
        first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
        return MatchSet(a[first], b[first], c[first], f"{warp_a.name}|{warp_b.name}")

    return matcher


def cmd_match(args) -> int:
    cfg = _config(args).dataset(args.dataset)
    path_a, path_b = Path(args.a), Path(args.b)
    kp_a, kp_b = io.read_features(path_a), io.read_features(path_b)
    if args.external_matches:
        ms = io.read_matches(args.external_matches, len(kp_a), len(kp_b))
        io.write_matches(args.out, ms)
        return 0
    if kp_a.descriptors is None or kp_b.descriptors is None:
        raise UsageError("built-in matching needs descriptors in both feature files")
    mc = cfg.matching
    base = match_mutual_nn(kp_a.descriptors, kp_b.descriptors, mc.min_confidence, mc.ratio)
    if cfg.pyramid.mode != "none" and cfg.pyramid.applies_to(args.task):
        size_a = _frame_size(kp_a, args.image_size)
        size_b = _frame_size(kp_b, args.image_size)
        matcher = _level_matcher(path_a, path_b, kp_a, kp_b, size_a, size_b, mc.min_confidence, mc.ratio)
        base = guided_pyramid_match(base, cfg.pyramid.spec(), matcher, size_a, size_b)
    io.write_matches(args.out, base.sorted())
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _intrinsics(path):
    raw = io.read_json(path)
    try:
        return CameraIntrinsics(**raw["K1"]), CameraIntrinsics(**raw["K2"])
    except (KeyError, TypeError) as exc:
        raise ConfigError("intrinsics", f"expected K1/K2 objects with fx, fy, cx, cy ({exc})") from None


def _pose_json(pose: RelativePose) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def cmd_estimate(args) -> int:
    pcfg = _config(args)
    cfg = pcfg.dataset(args.dataset)
    kp_a, kp_b = io.read_features(args.a), io.read_features(args.b)
    ms = io.read_matches(args.matches, len(kp_a), len(kp_b))
    x1, x2 = ms.points(kp_a, kp_b)
    rcfg = cfg.ransac.ransac_config(args.task, _seed(args, pcfg))
    K = _intrinsics(args.intrinsics) if args.intrinsics else None
    out = {"num_matches": len(ms), "task": args.task, "dataset": cfg.name}
    try:
        if cfg.uses_adaptive_fh(args.task):
            sel = adaptive_fh(x1, x2, rcfg)
            model = sel.model
            out.update(sf=sel.sf, sh=sel.sh, rh=sel.rh)
            f_model = sel.f_hypothesis
            if sel.chosen == HOMOGRAPHY:
                # pose still comes from F, fitted on the matches H kept
                keep = model.inliers
                try:
                    f_model = ransac_fundamental(x1[keep], x2[keep], rcfg)
                    f_model = type(f_model)(f_model.kind, f_model.matrix, keep[f_model.inliers],
                                            f_model.score, f_model.iterations)
                except TwoViewError:
                    pass
        else:
            model = f_model = ransac_fundamental(x1, x2, rcfg)
        out.update(status="ok", model=model.kind, matrix=model.matrix.tolist(),
                   inliers=model.inliers.tolist(), num_inliers=len(model.inliers),
                   iterations=model.iterations)
        if K is not None:
            if f_model is None or f_model.kind != FUNDAMENTAL:
                out["pose"] = None
            else:
                inl = f_model.inliers
                try:
                    out["pose"] = _pose_json(recover_pose_from_f(f_model.matrix, K[0], K[1], x1[inl], x2[inl]))
                except TwoViewError as exc:
                    out["pose"] = None
                    out["pose_error"] = exc.kind
    except (NoModelFound, NotEnoughCorrespondences) as exc:
        # no model is a legitimate outcome for a pair, not a usage error
        out.update(status="failed", reason=exc.kind, message=str(exc))
    io.write_json(args.out, out)
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    results, truth_dir = Path(args.results), Path(args.truth)
    truth_files = sorted(truth_dir.glob("*.json"))
    if not truth_files:
        raise UsageError(f"no truth files in {truth_dir}")
    per_pair, errors = {}, []
    for tf in truth_files:
        truth = io.read_json(tf)
        gt = RelativePose.from_rt(np.array(truth["rotation"]), np.array(truth["translation"]))
        rf = results / tf.name
        est = io.read_json(rf) if rf.exists() else None
        pose = est.get("pose") if est and est.get("status") == "ok" else None
        if pose is None:
            entry = {"status": "missing" if est is None else "failed", "rotation_error": None,
                     "translation_error": None, "error": _FAILED_ERROR_DEG}
            errors.append(None)
        else:
            pe = pose_error(RelativePose.from_rt(np.array(pose["rotation"]), np.array(pose["translation"])), gt)
            entry = {"status": "ok", "rotation_error": pe.rotation_error,
                     "translation_error": pe.translation_angle_error, "error": pe.combined}
            errors.append(pe)
        per_pair[tf.stem] = entry
    auc = exact_auc([e["error"] for e in per_pair.values()], AUC_THRESHOLDS)
    report = {"n_pairs": len(per_pair), "n_failed": sum(e is None for e in errors),
              "auc": {f"{t:g}": v for t, v in auc.items()}, "pairs": per_pair}
    io.write_json(args.report or results / "report.json", report)
    print(format_auc_table(auc, label=args.label))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected WIDTHxHEIGHT") from None
    return w, h


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twoview", description="Two-view geometry pipeline on precomputed features.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, task=False):
        sp.add_argument("--config", help="pipeline config JSON (defaults built in)")
        sp.add_argument("--dataset", help="config block to use (default: the config's default_dataset)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if task:
            sp.add_argument("--task", choices=TASKS, default=STEREO)

    s = sub.add_parser("synth", help="write synthetic features, truth and intrinsics")
    s.add_argument("--spec", required=True, help="scene spec JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("process", help="threshold, NMS, refine, mask-filter and cap keypoints")
    s.add_argument("--features", help="input feature file")
    s.add_argument("--score-map", help="dense score map (TVGS); enables refinement")
    s.add_argument("--mask", help="class mask (TVGK)")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("match", help="mutual-NN matching with the guided pyramid path",
                       description="Per-level features for pyramid matching are read from "
                                   "<stem>.<level>.tvgf next to --a and --b when present.")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--external-matches", help="use this match file instead of matching")
    s.add_argument("--image-size", type=_size, help="WIDTHxHEIGHT for pyramid warps")
    s.add_argument("--out", required=True)
    common(s, task=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("estimate", help="robust F (or adaptive F/H) and optional relative pose")
    s.add_argument("--matches", required=True)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--intrinsics", help="JSON with K1 and K2 (fx, fy, cx, cy)")
    s.add_argument("--out", required=True)
    common(s, task=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("evaluate", help="pose errors and exact AUC over a results directory")
    s.add_argument("--results", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--report", help="report path (default: <results>/report.json)")
    s.add_argument("--label", default="method", help="row label in the printed table")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (TwoViewError, ValueError, OSError) as exc:
        kind = getattr(exc, "kind", type(exc).__name__)
        msg = " ".join(str(exc).split())
        print(f"error\t{kind}\t{msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

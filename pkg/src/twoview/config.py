"""Pipeline configuration: one block per dataset, validated field by field.

The shipped defaults hold one block for each of the three built-in datasets.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .keypoints import REFINE_TAU
from .pyramid import ALL, MAX, NONE, ORIENTATION, ORIENTATIONS, SCALE, PyramidSpec
from .robust import RansacConfig

STEREO = "stereo"
MULTIVIEW = "multiview"
TASKS = (STEREO, MULTIVIEW)
STAGES = ("both", "only_stereo", "only_mv")
ADAPT_FH = ("off", "only_mv", "always")


@dataclass(frozen=True)
class PyramidConfig:
    mode: str = SCALE
    combine: str = ALL
    stage: str = "both"
    scale_factors: tuple = (0.5, 1.0, 2.0)
    orientations: tuple = ORIENTATIONS
    guided_trigger_matches: int = 100

    def spec(self) -> PyramidSpec:
        return PyramidSpec(self.mode, tuple(self.scale_factors), tuple(self.orientations),
                           self.combine, self.guided_trigger_matches)

    def applies_to(self, task: str) -> bool:
        return self.stage == "both" or (self.stage == "only_stereo") == (task == STEREO)


@dataclass(frozen=True)
class MatchingConfig:
    min_confidence: float = 0.2
    ratio: float | None = None


@dataclass(frozen=True)
class RansacSettings:
    max_iterations: int = 100_000
    threshold_stereo: float = 1.1
    threshold_mv: float = 1.1
    confidence: float = 0.9999
    degeneracy_check: bool = True
    min_inliers: int = 15

    def ransac_config(self, task: str, seed: int) -> RansacConfig:
        thr = self.threshold_stereo if task == STEREO else self.threshold_mv
        return RansacConfig(max_iterations=self.max_iterations, inlier_threshold_px=thr,
                            confidence=self.confidence, rng_seed=seed,
                            degeneracy_check=self.degeneracy_check, min_inliers=self.min_inliers)


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    image_size: int = 1600
    keypoint_budget: int = 5000
    keypoints_after_mask: int = 2048
    keypoint_threshold: float = 0.0005
    nms_window: int | None = 4  # None sizes the window from the score map
    mask_enabled: bool = True
    refine_radius: int = 2
    refine_tau: float = REFINE_TAU
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    ransac: RansacSettings = field(default_factory=RansacSettings)
    adapt_fh: str = "off"

    def uses_adaptive_fh(self, task: str) -> bool:
        return self.adapt_fh == "always" or (self.adapt_fh == "only_mv" and task == MULTIVIEW)


@dataclass(frozen=True)
class PipelineConfig:
    datasets: dict
    default_dataset: str
    seed: int = 0

    def dataset(self, name: str | None = None) -> DatasetConfig:
        name = name or self.default_dataset
        if name not in self.datasets:
            raise ConfigError("dataset", f"unknown dataset {name!r}; have {sorted(self.datasets)}")
        return self.datasets[name]


def default_config() -> PipelineConfig:
    blocks = {
        "phototourism": DatasetConfig("phototourism", image_size=1600, mask_enabled=True,
                                      ransac=RansacSettings(threshold_stereo=1.1, threshold_mv=1.1)),
        "pragueparks": DatasetConfig("pragueparks", image_size=2048, mask_enabled=False,
                                     ransac=RansacSettings(threshold_stereo=2.5, threshold_mv=2.5)),
        "googleurban": DatasetConfig("googleurban", image_size=1600, mask_enabled=True,
                                     ransac=RansacSettings(threshold_stereo=1.1, threshold_mv=1.2)),
    }
    return PipelineConfig(blocks, "phototourism", 0)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _number(key, v, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if v != v:
        raise ConfigError(key, "NaN is not allowed")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(key, f"{v!r} below {'(' if lo_open else '['}{lo}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(key, f"{v!r} above {hi}{')' if hi_open else ']'}")
    return int(v) if integer else float(v)


def _choice(key, v, options):
    if v not in options:
        raise ConfigError(key, f"{v!r} not one of {list(options)}")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(key, f"expected true/false, got {v!r}")
    return v


def _section(key, raw, cls, parsers):
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in known or k not in parsers:
            raise ConfigError(f"{key}.{k}", "unknown key")
    return {k: parsers[k](f"{key}.{k}", v) for k, v in raw.items()}


def _name(key, v):
    if not isinstance(v, str) or not v:
        raise ConfigError(key, "expected a non-empty name")
    return v


def _factors(key, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a non-empty list")
    out = tuple(_number(f"{key}[{i}]", x, 0.0, 16.0, lo_open=True) for i, x in enumerate(v))
    if 1.0 not in out:
        raise ConfigError(key, "must contain 1.0")
    return out


def _orientations(key, v):
    if not isinstance(v, list) or "identity" not in v:
        raise ConfigError(key, "expected a list containing 'identity'")
    for i, x in enumerate(v):
        _choice(f"{key}[{i}]", x, ORIENTATIONS)
    return tuple(v)


_PYRAMID = {
    "mode": lambda k, v: _choice(k, v, (SCALE, ORIENTATION, NONE)),
    "combine": lambda k, v: _choice(k, v, (ALL, MAX)),
    "stage": lambda k, v: _choice(k, v, STAGES),
    "scale_factors": _factors,
    "orientations": _orientations,
    "guided_trigger_matches": lambda k, v: _number(k, v, 0, 1_000_000, integer=True),
}
_MATCHING = {
    "min_confidence": lambda k, v: _number(k, v, 0.0, 1.0),
    "ratio": lambda k, v: None if v is None else _number(k, v, 0.0, 1.0, lo_open=True),
}
_RANSAC = {
    "max_iterations": lambda k, v: _number(k, v, 1, 100_000_000, integer=True),
    "threshold_stereo": lambda k, v: _number(k, v, 0.0, 100.0, lo_open=True),
    "threshold_mv": lambda k, v: _number(k, v, 0.0, 100.0, lo_open=True),
    "confidence": lambda k, v: _number(k, v, 0.0, 1.0, lo_open=True, hi_open=True),
    "degeneracy_check": _bool,
    "min_inliers": lambda k, v: _number(k, v, 8, 1_000_000, integer=True),
}


def _dataset(key, raw, base: DatasetConfig) -> DatasetConfig:
    parsers = {
        "name": _name,
        "image_size": lambda k, v: _number(k, v, 16, 20_000, integer=True),
        "keypoint_budget": lambda k, v: _number(k, v, 1, 1_000_000, integer=True),
        "keypoints_after_mask": lambda k, v: _number(k, v, 0, 1_000_000, integer=True),
        "keypoint_threshold": lambda k, v: _number(k, v, 0.0, 1.0),
        "nms_window": lambda k, v: None if v is None else _number(k, v, 1, 64, integer=True),
        "mask_enabled": _bool,
        "refine_radius": lambda k, v: _number(k, v, 0, 8, integer=True),
        "refine_tau": lambda k, v: _number(k, v, 0.0, 100.0, lo_open=True),
        "pyramid": lambda k, v: dataclasses.replace(base.pyramid, **_section(k, v, PyramidConfig, _PYRAMID)),
        "matching": lambda k, v: dataclasses.replace(base.matching, **_section(k, v, MatchingConfig, _MATCHING)),
        "ransac": lambda k, v: dataclasses.replace(base.ransac, **_section(k, v, RansacSettings, _RANSAC)),
        "adapt_fh": lambda k, v: _choice(k, v, ADAPT_FH),
    }
    out = dataclasses.replace(base, **_section(key, raw, DatasetConfig, parsers))
    if out.keypoints_after_mask > out.keypoint_budget:
        raise ConfigError(f"{key}.keypoints_after_mask", "exceeds keypoint_budget")
    return out


def parse_config(raw) -> PipelineConfig:
    """Build a config from parsed JSON; omitted fields keep their defaults.

    Blocks named like a default dataset start from that dataset's defaults; new
    names start from the phototourism block.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected an object")
    for k in raw:
        if k not in ("datasets", "default_dataset", "seed"):
            raise ConfigError(k, "unknown key")
    base = default_config()
    datasets = dict(base.datasets)
    raw_ds = raw.get("datasets", {})
    if not isinstance(raw_ds, dict):
        raise ConfigError("datasets", "expected an object")
    for name, block in raw_ds.items():
        start = datasets.get(name, dataclasses.replace(base.datasets["phototourism"], name=name))
        datasets[name] = _dataset(f"datasets.{name}", block, start)
    default = raw.get("default_dataset", base.default_dataset)
    if default not in datasets:
        raise ConfigError("default_dataset", f"unknown dataset {default!r}")
    seed = _number("seed", raw.get("seed", base.seed), 0, 2 ** 63 - 1, integer=True)
    return PipelineConfig(datasets, default, seed)


def config_to_dict(cfg: PipelineConfig) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return copy.copy(v)

    return {"datasets": {k: conv(v) for k, v in cfg.datasets.items()},
            "default_dataset": cfg.default_dataset, "seed": cfg.seed}


def load_config(path) -> PipelineConfig:
    from .io import read_json

    return parse_config(read_json(path))

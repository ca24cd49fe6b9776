"""Relative-pose errors and exact AUC of the cumulative accuracy curve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput
from .geometry import RelativePose

AUC_THRESHOLDS = (5.0, 10.0, 20.0)


@dataclass(frozen=True)
class PoseError:
    rotation_error: float  # degrees
    translation_angle_error: float  # degrees, sign of t ignored

    @property
    def combined(self) -> float:
        """Per-pair error used for AUC: the worse of the two components."""
        return max(self.rotation_error, self.translation_angle_error)


def rotation_angle_deg(Ra, Rb) -> float:
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_angle_deg(ta, tb) -> float:
    ta, tb = np.asarray(ta, dtype=float), np.asarray(tb, dtype=float)
    c = abs(ta @ tb) / (np.linalg.norm(ta) * np.linalg.norm(tb))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_error(estimate: RelativePose, truth: RelativePose) -> PoseError:
    return PoseError(rotation_angle_deg(estimate.rotation, truth.rotation),
                     translation_angle_deg(estimate.translation, truth.translation))


def exact_auc(errors, thresholds=AUC_THRESHOLDS) -> dict[float, float]:
    """Area under recall(t) = |{e <= t}| / N on [0, T], divided by T.

    The curve is a step function with a jump of 1/N at each sorted error, so the
    integral is the sum of (T - e_k) / N over errors below T.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if e.size == 0:
        raise EmptyInput("no errors to summarize")
    if not np.isfinite(e).all():
        raise ValueError("errors must be finite")
    out = {}
    for T in thresholds:
        below = e[e < T]
        out[float(T)] = float((T - below).sum() / (e.size * T))
    return out


def aggregate(per_pair: list[PoseError], thresholds=AUC_THRESHOLDS) -> dict[float, float]:
    return exact_auc([p.combined for p in per_pair], thresholds)


def format_auc_table(auc: dict[float, float], label: str = "method") -> str:
    """Aligned text table with one column per threshold, values in percent."""
    heads = [f"AUC@{t:g}" for t in auc]
    width = max(len(label), 8)
    lines = [f"{'':<{width}}  " + "  ".join(f"{h:>8}" for h in heads),
             f"{label:<{width}}  " + "  ".join(f"{100.0 * v:>8.2f}" for v in auc.values())]
    return "\n".join(lines)

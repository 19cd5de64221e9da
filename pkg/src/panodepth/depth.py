"""Per-pixel depth errors, lambda-inlier masks and the depth metric suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from panodepth.core import DepthMap, PdcqConfig

DELTA_THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)


@dataclass(frozen=True)
class DepthMetrics:
    """Depth accuracy over the valid pixels of one frame (or a frame average).

    When ``valid_pixel_count`` is 0 every metric is ``None``: there is nothing
    to measure, and NaN would poison downstream averages.
    """

    abs_rel: Optional[float]
    rmse: Optional[float]
    delta1: Optional[float]
    delta2: Optional[float]
    delta3: Optional[float]
    valid_pixel_count: int

    @classmethod
    def empty(cls) -> "DepthMetrics":
        return cls(None, None, None, None, None, 0)

    @property
    def is_empty(self) -> bool:
        return self.valid_pixel_count == 0

    @classmethod
    def from_sums(cls, n_valid, abs_rel_sum, sq_sum, c1, c2, c3) -> "DepthMetrics":
        if n_valid == 0:
            return cls.empty()
        return cls(abs_rel_sum / n_valid, math.sqrt(sq_sum / n_valid),
                   c1 / n_valid, c2 / n_valid, c3 / n_valid, int(n_valid))

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "rmse": self.rmse,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "valid_pixel_count": self.valid_pixel_count,
        }


@dataclass(frozen=True, eq=False)
class ErrorMap:
    errors: np.ndarray  # abs-rel error; 0 where invalid
    valid: np.ndarray


def valid_gt_mask(gt: np.ndarray, config: PdcqConfig) -> np.ndarray:
    return (gt > 0) & (gt >= config.min_depth) & (gt <= config.max_depth)


def abs_rel_map(pred: DepthMap, gt: DepthMap, config: PdcqConfig) -> ErrorMap:
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    g = gt.depth
    valid = valid_gt_mask(g, config)
    errors = np.zeros(g.shape, dtype=np.float64)
    errors[valid] = np.abs(pred.depth[valid] - g[valid]) / g[valid]
    return ErrorMap(errors, valid)


def inlier_mask(errors: ErrorMap, lam: float, inclusive: bool = True) -> np.ndarray:
    """True where a predicted pixel survives the depth filter at threshold ``lam``.

    Pixels without valid ground-truth depth are always inliers.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    passes = errors.errors <= lam if inclusive else errors.errors < lam
    return passes | ~errors.valid


def depth_metrics(pred: DepthMap, gt: DepthMap, config: PdcqConfig) -> DepthMetrics:
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = valid_gt_mask(gt.depth, config)
    n = int(valid.sum())
    if n == 0:
        return DepthMetrics.empty()
    p = pred.depth[valid]
    g = gt.depth[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        delta1=float(np.mean(ratio < DELTA_THRESHOLDS[0])),
        delta2=float(np.mean(ratio < DELTA_THRESHOLDS[1])),
        delta3=float(np.mean(ratio < DELTA_THRESHOLDS[2])),
        valid_pixel_count=n,
    )


def average_metrics(per_frame: list[DepthMetrics]) -> DepthMetrics:
    """Frame-averaged metrics; frames without valid pixels are skipped.

    ``math.fsum`` keeps the result independent of the order frames arrive in.
    """
    frames = [m for m in per_frame if not m.is_empty]
    if not frames:
        return DepthMetrics.empty()
    n = len(frames)
    return DepthMetrics(
        abs_rel=math.fsum(m.abs_rel for m in frames) / n,
        rmse=math.fsum(m.rmse for m in frames) / n,
        delta1=math.fsum(m.delta1 for m in frames) / n,
        delta2=math.fsum(m.delta2 for m in frames) / n,
        delta3=math.fsum(m.delta3 for m in frames) / n,
        valid_pixel_count=sum(m.valid_pixel_count for m in frames),
    )

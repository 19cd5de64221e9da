"""Depth-aware panoptic forecasting evaluation: PQ with a per-pixel depth filter."""

from panodepth.core import (
    ClassInfo,
    ClassTable,
    DepthMap,
    EvalFrame,
    PanopticMap,
    PdcqConfig,
    Segment,
    validate,
)
from panodepth.depth import DepthMetrics, depth_metrics
from panodepth.match import extract_segments, match_segments
from panodepth.pdcq import PdcqReport, StatAccumulator, evaluate_frames, finalize, merge

__version__ = "0.1.0"

__all__ = [
    "ClassInfo",
    "ClassTable",
    "DepthMap",
    "DepthMetrics",
    "EvalFrame",
    "PanopticMap",
    "PdcqConfig",
    "PdcqReport",
    "Segment",
    "StatAccumulator",
    "depth_metrics",
    "evaluate_frames",
    "extract_segments",
    "finalize",
    "match_segments",
    "merge",
    "validate",
]

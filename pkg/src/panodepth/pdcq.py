"""PDC-Q: panoptic quality after discarding depth-outlier predicted pixels.

For each threshold ``lam`` a predicted pixel whose absolute relative depth
error exceeds ``lam`` is reassigned to void, then standard panoptic matching
runs against the untouched ground truth. Statistics are summed over all
frames of a horizon before dividing, and averaged over evaluated classes.
``lam = inf`` keeps every pixel and is reported as plain PQ.

Accumulators are exact (IoU sums are kept as ``Fraction``), so merging
partial results in any order yields bit-identical reports.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from panodepth import kernels
from panodepth.core import ClassTable, EvalFrame, PanopticMap, PdcqConfig, check_same_shape
from panodepth.depth import DepthMetrics, abs_rel_map, average_metrics
from panodepth.match import MatchResult, extract_segments, match_counts, pair_counts

INF = math.inf


class EmptyAccumulatorError(ValueError):
    pass


def lambda_key(lam: float) -> str:
    return "inf" if math.isinf(lam) else repr(float(lam))


@dataclass
class CellStats:
    iou_sum: Fraction = Fraction(0)
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "CellStats") -> "CellStats":
        return CellStats(self.iou_sum + other.iou_sum, self.tp + other.tp,
                         self.fp + other.fp, self.fn + other.fn)

    def __eq__(self, other):
        return (isinstance(other, CellStats) and self.iou_sum == other.iou_sum and self.tp == other.tp
                and self.fp == other.fp and self.fn == other.fn)


@dataclass
class StatAccumulator:
    """Per-(class, lambda, delta) match statistics plus per-frame depth metrics.

    Depth metrics are keyed by frame so that accumulating several lambdas of
    the same frame never counts its depth twice.
    """

    classes: ClassTable
    cells: dict = field(default_factory=dict)   # (class_id, lam, delta) -> CellStats
    depth: dict = field(default_factory=dict)   # (sequence, t, delta) -> DepthMetrics

    def add_match(self, result: MatchResult, lam: float, delta: int) -> None:
        for class_id, m in result.per_class.items():
            if not (m.tp or m.fp or m.fn):
                continue
            cell = CellStats(sum((Fraction(x) for x in m.iou_values), Fraction(0)),
                             len(m.tp), len(m.fp), len(m.fn))
            key = (class_id, lam, delta)
            self.cells[key] = self.cells[key] + cell if key in self.cells else cell

    def add_depth(self, key: tuple, metrics: DepthMetrics) -> None:
        old = self.depth.get(key)
        if old is not None and old != metrics:
            raise ValueError(f"conflicting depth metrics for frame {key}")
        self.depth[key] = metrics

    def update(self, other: "StatAccumulator") -> "StatAccumulator":
        """In-place merge of ``other`` into this accumulator."""
        if self.classes != other.classes:
            raise ValueError("cannot merge accumulators built on different class tables")
        for key, cell in other.cells.items():
            self.cells[key] = self.cells[key] + cell if key in self.cells else cell
        for key, m in other.depth.items():
            self.add_depth(key, m)
        return self

    @property
    def deltas(self) -> list[int]:
        return sorted({k[2] for k in self.depth} | {k[2] for k in self.cells})

    def frame_count(self, delta: int) -> int:
        return sum(1 for k in self.depth if k[2] == delta)

    def __eq__(self, other):
        return (isinstance(other, StatAccumulator) and self.classes == other.classes
                and self.cells == other.cells and self.depth == other.depth)


def merge(a: StatAccumulator, b: StatAccumulator) -> StatAccumulator:
    return StatAccumulator(a.classes, dict(a.cells), dict(a.depth)).update(b)


def apply_depth_filter(pred_pan: PanopticMap, inliers: np.ndarray, void_class_id: int) -> PanopticMap:
    """Copy of ``pred_pan`` with every non-inlier pixel set to (void, 0)."""
    check_same_shape(pred_pan.class_ids, inliers)
    keep = np.asarray(inliers, dtype=bool)
    cls = np.where(keep, pred_pan.class_ids, np.uint8(void_class_id))
    inst = np.where(keep, pred_pan.instance_ids, np.uint16(0))
    return PanopticMap(cls, inst)


def _segment_mode_demote(result: MatchResult, errors, pred_set, lam: float, inclusive: bool) -> MatchResult:
    """Strict per-pair reading: a TP whose predicted segment has mean depth
    error above ``lam`` becomes one FP plus one FN."""
    idx = pred_set.index[errors.valid]
    n = len(pred_set)
    ok = idx >= 0
    err_sum = np.bincount(idx[ok], weights=errors.errors[errors.valid][ok], minlength=n)
    err_cnt = np.bincount(idx[ok], minlength=n)
    for m in result.per_class.values():
        kept = []
        for pred, gt, value in m.tp:
            i = pred_set.position(pred)
            mean_err = err_sum[i] / err_cnt[i] if err_cnt[i] else 0.0
            good = mean_err <= lam if inclusive else mean_err < lam
            if good:
                kept.append((pred, gt, value))
            else:
                m.fp.append(pred)
                m.fn.append(gt)
        m.tp = kept
    return result


def frame_stats_multi(frame: EvalFrame, lambdas: Sequence[float], classes: ClassTable,
                      config: PdcqConfig) -> StatAccumulator:
    """Statistics for several thresholds from one fused pass over the frame.

    ``lambdas`` may include ``inf``; finite values must be increasing.
    """
    finite = sorted(l for l in set(lambdas) if not math.isinf(l))
    if any(not l > 0 for l in finite):
        raise ValueError(f"lambda thresholds must be positive, got {lambdas}")
    if frame.delta not in config.deltas:
        raise ValueError(f"frame {frame.key}: horizon {frame.delta} not in configured set {config.deltas}")

    levels, sums = kernels.depth_pass(frame.pred_depth.depth, frame.gt_depth.depth,
                                      np.asarray(finite, dtype=np.float64),
                                      config.min_depth, config.max_depth, config.inclusive)
    acc = StatAccumulator(classes)
    acc.add_depth(frame.key, DepthMetrics.from_sums(*sums))

    gt_set = extract_segments(frame.gt_pan, classes)
    pred_set = extract_segments(frame.pred_pan, classes)

    if config.filter_mode == "pixel":
        counts = pair_counts(gt_set, pred_set, levels, len(finite) + 1)
        for lam in lambdas:
            max_level = None if math.isinf(lam) else finite.index(lam)
            acc.add_match(match_counts(counts, gt_set, pred_set, classes, max_level), lam, frame.delta)
    else:
        counts = pair_counts(gt_set, pred_set)
        errors = abs_rel_map(frame.pred_depth, frame.gt_depth, config)
        for lam in lambdas:
            result = match_counts(counts, gt_set, pred_set, classes)
            if not math.isinf(lam):
                result = _segment_mode_demote(result, errors, pred_set, lam, config.inclusive)
            acc.add_match(result, lam, frame.delta)
    return acc


def frame_stats(frame: EvalFrame, lam: float, classes: ClassTable, config: PdcqConfig) -> StatAccumulator:
    return frame_stats_multi(frame, [lam], classes, config)


def evaluate_frames(frames: Iterable, classes: ClassTable, config: PdcqConfig,
                    threads: int = 1, include_pq: bool = True,
                    load: Optional[Callable[[object], EvalFrame]] = None) -> StatAccumulator:
    """Accumulate statistics for every configured lambda (and PQ) over ``frames``.

    With ``load``, ``frames`` holds references that each worker turns into an
    ``EvalFrame`` itself, so decoding runs in the pool too. Results are merged
    in input order, although exact accumulation makes the order irrelevant.
    """
    lambdas = list(dict.fromkeys(list(config.lambdas) + ([INF] if include_pq else [])))

    def work(item) -> StatAccumulator:
        frame = load(item) if load is not None else item
        return frame_stats_multi(frame, lambdas, classes, config)

    acc = StatAccumulator(classes)
    if threads <= 1:
        for item in frames:
            acc.update(work(item))
        return acc
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for part in pool.map(work, frames):
            acc.update(part)
    return acc


@dataclass(frozen=True)
class Scores:
    """Averaged scores in percent over ``n_classes`` evaluated classes.

    ``sq`` is the RQ-weighted mean of per-class SQ, so ``pq == sq * rq / 100``
    holds for averages as it does per class.
    """

    pq: Optional[float]
    sq: Optional[float]
    rq: Optional[float]
    n_classes: int

    def to_dict(self) -> dict:
        return {"pq": self.pq, "sq": self.sq, "rq": self.rq, "n_classes": self.n_classes}


@dataclass(frozen=True)
class ClassScores:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float

    def to_dict(self) -> dict:
        return {"pq": self.pq, "sq": self.sq, "rq": self.rq, "tp": self.tp, "fp": self.fp,
                "fn": self.fn, "iou_sum": self.iou_sum}


@dataclass(frozen=True)
class CellReport:
    all: Scores
    things: Scores
    stuff: Scores
    per_class: dict  # class_id -> ClassScores

    def to_dict(self) -> dict:
        return {
            "all": self.all.to_dict(),
            "things": self.things.to_dict(),
            "stuff": self.stuff.to_dict(),
            "per_class": {str(k): v.to_dict() for k, v in sorted(self.per_class.items())},
        }


@dataclass(frozen=True)
class PdcqReport:
    lambdas: tuple
    deltas: tuple
    cells: dict         # (lam, delta) -> CellReport; lam = inf is plain PQ
    depth: dict         # delta -> DepthMetrics (frame-averaged)
    frames: dict        # delta -> frame count
    overall: dict       # lam -> overall PDC-Q over horizons (inf: overall PQ)
    overall_avg: float  # mean of overall over the finite lambdas
    aggregation: str

    def pdcq(self, lam: float, delta: int, subset: str = "all") -> Optional[float]:
        return getattr(self.cells[(lam, delta)], subset).pq

    def pq(self, delta: int, subset: str = "all") -> Optional[float]:
        return getattr(self.cells[(INF, delta)], subset).pq

    def horizon_avg(self, delta: int) -> float:
        """Mean PDC-Q over the finite lambdas at one horizon."""
        vals = [self.pdcq(lam, delta) or 0.0 for lam in self.lambdas]
        return sum(vals) / len(vals)

    def to_dict(self) -> dict:
        horizons = {}
        for d in self.deltas:
            horizons[str(d)] = {
                "frames": self.frames[d],
                "pdcq_avg": self.horizon_avg(d),
                "pdcq": {lambda_key(l): self.cells[(l, d)].to_dict() for l in self.lambdas},
                "pq": self.cells[(INF, d)].to_dict(),
                "depth": self.depth[d].to_dict(),
            }
        return {
            "lambdas": list(self.lambdas),
            "deltas": list(self.deltas),
            "aggregation": self.aggregation,
            "horizons": horizons,
            "overall": {
                "pdcq": {lambda_key(l): self.overall[l] for l in self.lambdas},
                "pdcq_avg": self.overall_avg,
                "pq": self.overall[INF],
            },
        }


def _class_scores(cell: CellStats) -> ClassScores:
    iou = float(cell.iou_sum)
    denom = cell.tp + 0.5 * cell.fp + 0.5 * cell.fn
    return ClassScores(
        pq=100.0 * iou / denom,
        sq=100.0 * iou / cell.tp if cell.tp else 0.0,
        rq=100.0 * cell.tp / denom,
        tp=cell.tp, fp=cell.fp, fn=cell.fn, iou_sum=iou,
    )


def _average(scores: list[ClassScores]) -> Scores:
    if not scores:
        return Scores(None, None, None, 0)
    n = len(scores)
    pq = math.fsum(s.pq for s in scores) / n
    rq = math.fsum(s.rq for s in scores) / n
    sq = 100.0 * pq / rq if rq > 0 else 0.0
    return Scores(pq, sq, rq, n)


def finalize(acc: StatAccumulator, classes: ClassTable, config: PdcqConfig) -> PdcqReport:
    if acc.classes != classes:
        raise ValueError("accumulator was built on a different class table")
    deltas = [d for d in acc.deltas if acc.frame_count(d) > 0]
    if not deltas:
        raise EmptyAccumulatorError("no frames accumulated")
    lambdas = tuple(config.lambdas)
    cells = {}
    for d in deltas:
        for lam in lambdas + (INF,):
            per_class = {}
            for c in classes.ids:
                cell = acc.cells.get((c, lam, d))
                if cell is not None and cell.tp + cell.fp + cell.fn > 0:
                    per_class[c] = _class_scores(cell)
            things = [per_class[c] for c in classes.thing_ids if c in per_class]
            stuff = [per_class[c] for c in classes.stuff_ids if c in per_class]
            cells[(lam, d)] = CellReport(_average(things + stuff), _average(things), _average(stuff), per_class)

    depth = {d: average_metrics([m for k, m in sorted(acc.depth.items()) if k[2] == d]) for d in deltas}
    frames = {d: acc.frame_count(d) for d in deltas}

    overall = {}
    for lam in lambdas + (INF,):
        vals = [cells[(lam, d)].all.pq or 0.0 for d in deltas]
        total = math.fsum(vals)
        overall[lam] = total / len(vals) if config.overall_aggregation == "mean" else total
    overall_avg = math.fsum(overall[l] for l in lambdas) / len(lambdas)
    return PdcqReport(lambdas, tuple(deltas), cells, depth, frames, overall, overall_avg,
                      config.overall_aggregation)

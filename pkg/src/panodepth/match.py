"""Segment extraction and class-wise TP/FP/FN matching.

Matching follows the usual panoptic-quality rules: a same-class pair with
IoU > 0.5 is a true positive (the threshold makes the pairing unique), the
union ignores the part of the prediction lying on ground-truth void, GT
crowd regions never count as false negatives, and an unmatched prediction
lying mostly on void or same-class crowd is dropped instead of counted as a
false positive.

All intersections come from one sparse pair histogram over the two label
grids (see ``kernels.pair_counts``) rather than per-segment masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from panodepth import kernels
from panodepth.core import ClassTable, PanopticMap, Segment


class ClassTableMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SegmentSet:
    segments: tuple[Segment, ...]
    index: np.ndarray  # int32 grid; segment position or -1 for void / unknown class
    classes: ClassTable

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def void(self) -> np.ndarray:
        return self.index < 0

    def position(self, segment: Segment) -> int:
        for i, s in enumerate(self.segments):
            if s.label == segment.label:
                return i
        raise KeyError(f"segment {segment.label} not in this set")

    def find(self, class_id: int, instance_id: int = 0) -> Optional[Segment]:
        for s in self.segments:
            if s.label == (class_id, instance_id):
                return s
        return None

    def mask(self, segment: Segment) -> np.ndarray:
        return self.index == self.position(segment)

    @property
    def class_array(self) -> np.ndarray:
        return np.fromiter((s.class_id for s in self.segments), dtype=np.int64, count=len(self.segments))

    @property
    def area_array(self) -> np.ndarray:
        return np.fromiter((s.pixel_count for s in self.segments), dtype=np.int64, count=len(self.segments))

    @property
    def ignore_array(self) -> np.ndarray:
        return np.fromiter((s.is_ignore for s in self.segments), dtype=bool, count=len(self.segments))


def extract_segments(pan: PanopticMap, classes: ClassTable) -> SegmentSet:
    """One segment per thing instance and per stuff class present.

    A thing-class region with instance id 0 is a crowd region and is flagged
    ``is_ignore``; that flag only has an effect on the ground-truth side.
    """
    index, codes, areas = kernels.label_segments(pan.class_ids, pan.instance_ids, classes.kind_lut())
    segments = []
    for code, area in zip(codes.tolist(), areas.tolist()):
        c, n = divmod(code, 1000)
        segments.append(Segment(c, n, area, is_ignore=classes.is_thing(c) and n == 0))
    index.setflags(write=False)
    return SegmentSet(tuple(segments), index, classes)


def iou(pred: Segment, gt: Segment, pred_set: SegmentSet, gt_set: SegmentSet) -> float:
    """IoU of two segments with the prediction's GT-void pixels discounted."""
    p = pred_set.mask(pred) & ~gt_set.void
    g = gt_set.mask(gt)
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p)) + int(np.count_nonzero(g)) - inter
    return inter / union if union else 0.0


@dataclass
class ClassMatch:
    tp: list = field(default_factory=list)       # (pred Segment, gt Segment, iou)
    fp: list = field(default_factory=list)
    fn: list = field(default_factory=list)
    dropped: list = field(default_factory=list)  # preds lying mostly on void/crowd

    @property
    def iou_values(self) -> list[float]:
        return [x[2] for x in self.tp]


@dataclass
class MatchResult:
    per_class: dict[int, ClassMatch]

    def __getitem__(self, class_id: int) -> ClassMatch:
        return self.per_class[class_id]

    def counts(self, class_id: int) -> tuple[int, int, int]:
        m = self.per_class[class_id]
        return len(m.tp), len(m.fp), len(m.fn)


@dataclass(frozen=True, eq=False)
class PairCounts:
    """Sparse histogram over (gt segment, pred segment, depth level) triples.

    Index -1 stands for void on either side. ``level`` is the first lambda
    index a predicted pixel survives (see ``kernels.depth_pass``).
    """

    gt: np.ndarray
    pred: np.ndarray
    level: np.ndarray
    count: np.ndarray
    n_levels: int = 1


def pair_counts(gt_set: SegmentSet, pred_set: SegmentSet, levels: Optional[np.ndarray] = None,
                n_levels: int = 1) -> PairCounts:
    if gt_set.index.shape != pred_set.index.shape:
        raise ValueError(f"dimension mismatch: gt {gt_set.index.shape} vs pred {pred_set.index.shape}")
    g, p, lv, c = kernels.pair_counts(gt_set.index, pred_set.index, len(gt_set), len(pred_set),
                                      levels, n_levels if levels is not None else 1)
    return PairCounts(g, p, lv, c, n_levels if levels is not None else 1)


def _check_tables(pred_set: SegmentSet, gt_set: SegmentSet, classes: ClassTable) -> None:
    if pred_set.classes != classes or gt_set.classes != classes:
        raise ClassTableMismatch("segment sets were extracted against a different class table")


def match_counts(counts: PairCounts, gt_set: SegmentSet, pred_set: SegmentSet, classes: ClassTable,
                 max_level: Optional[int] = None) -> MatchResult:
    """Match segments from a pair histogram.

    Pixels whose depth level exceeds ``max_level`` are treated as void in the
    prediction, which is exactly the depth-filter reassignment. ``None`` keeps
    every pixel.
    """
    _check_tables(pred_set, gt_set, classes)
    n_gt, n_pred = len(gt_set), len(pred_set)
    g = counts.gt.astype(np.int64)
    p = counts.pred.astype(np.int64)
    cnt = counts.count
    if max_level is not None:
        p = np.where(counts.level.astype(np.int64) <= max_level, p, -1)

    # collapse the level axis
    key = (g + 1) * (n_pred + 1) + (p + 1)
    ukey, inv = np.unique(key, return_inverse=True)
    inter = np.bincount(inv.ravel(), weights=cnt, minlength=len(ukey)).astype(np.int64)
    ug, up = np.divmod(ukey, n_pred + 1)
    ug -= 1
    up -= 1

    on_pred = up >= 0
    pred_area = np.bincount(up[on_pred], weights=inter[on_pred], minlength=n_pred).astype(np.int64)
    on_void = on_pred & (ug < 0)
    void_overlap = np.bincount(up[on_void], weights=inter[on_void], minlength=n_pred).astype(np.int64)

    gt_cls = gt_set.class_array
    gt_area = gt_set.area_array
    gt_ignore = gt_set.ignore_array
    pred_cls = pred_set.class_array

    both = on_pred & (ug >= 0)
    pg, pp, pi = ug[both], up[both], inter[both]
    same = gt_cls[pg] == pred_cls[pp]
    crowd = same & gt_ignore[pg]
    ignore_overlap = np.bincount(pp[crowd], weights=pi[crowd], minlength=n_pred).astype(np.int64)

    cand = same & ~gt_ignore[pg]
    cg, cp, ci = pg[cand], pp[cand], pi[cand]
    union = pred_area[cp] - void_overlap[cp] + gt_area[cg] - ci
    hit = 2 * ci > union

    result = MatchResult({c: ClassMatch() for c in classes.ids})
    pred_segs = pred_set.segments
    gt_segs = gt_set.segments

    def pred_segment(i: int) -> Segment:
        s = pred_segs[i]
        a = int(pred_area[i])
        return s if a == s.pixel_count else Segment(s.class_id, s.instance_id, a, s.is_ignore)

    gt_matched = np.zeros(n_gt, dtype=bool)
    pred_matched = np.zeros(n_pred, dtype=bool)
    for gi, pi_, i, u in zip(cg[hit].tolist(), cp[hit].tolist(), ci[hit].tolist(), union[hit].tolist()):
        gt_matched[gi] = True
        pred_matched[pi_] = True
        result.per_class[gt_segs[gi].class_id].tp.append((pred_segment(pi_), gt_segs[gi], i / u))

    for i in range(n_pred):
        area = int(pred_area[i])
        if pred_matched[i] or area == 0:
            continue
        seg = pred_segment(i)
        bucket = result.per_class[seg.class_id]
        if 2 * (int(void_overlap[i]) + int(ignore_overlap[i])) > area:
            bucket.dropped.append(seg)
        else:
            bucket.fp.append(seg)

    for i in range(n_gt):
        if not gt_matched[i] and not gt_ignore[i]:
            result.per_class[gt_segs[i].class_id].fn.append(gt_segs[i])
    return result


def match_segments(pred_set: SegmentSet, gt_set: SegmentSet, classes: ClassTable) -> MatchResult:
    _check_tables(pred_set, gt_set, classes)
    return match_counts(pair_counts(gt_set, pred_set), gt_set, pred_set, classes)

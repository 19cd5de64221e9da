from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_CLASSES, dep, pan
from panodepth.core import ClassInfo, ClassTable, EvalFrame, PdcqConfig
from panodepth.match import extract_segments
from panodepth.pdcq import (
    INF,
    CellStats,
    EmptyAccumulatorError,
    StatAccumulator,
    apply_depth_filter,
    evaluate_frames,
    finalize,
    frame_stats,
    frame_stats_multi,
    merge,
)
from panodepth.synth import DEFAULT_CLASSES, brute_force_pq, random_instance

CFG = PdcqConfig()
ONE_CLASS = ClassTable((ClassInfo(7, "road", False), ClassInfo(26, "car", True)), 255)


def _frame(p, pd, g, gd, t=0, delta=1, seq="s"):
    return EvalFrame(seq, t, delta, p, pd, g, gd)


def _random_frame(rng, size=16, t=0, delta=1, seq="s"):
    p, pd, g, gd = random_instance(rng, size, size)
    return _frame(p, pd, g, gd, t, delta, seq)


def test_filter_identity_and_all_outlier():
    p = pan([[7, 26], [23, 26]], [[0, 1], [0, 1]])
    assert apply_depth_filter(p, np.ones((2, 2), bool), 255) == p
    v = apply_depth_filter(p, np.zeros((2, 2), bool), 255)
    assert v == pan(np.full((2, 2), 255))


def test_half_outlier_segment_halves_pixel_count():
    p = pan([[26, 26, 26, 26]], [[1, 1, 1, 1]])
    f = apply_depth_filter(p, np.array([[True, False, True, False]]), 255)
    before = extract_segments(p, SMALL_CLASSES).find(26, 1).pixel_count
    after = extract_segments(f, SMALL_CLASSES).find(26, 1).pixel_count
    assert after * 2 == before


def test_perfect_frame_stats():
    rng = np.random.default_rng(1)
    _, _, g, gd = random_instance(rng, 16, 16)
    acc = frame_stats(_frame(g, gd, g, gd), 0.25, DEFAULT_CLASSES, CFG)
    assert acc.cells
    for cell in acc.cells.values():
        assert cell.fp == 0 and cell.fn == 0 and cell.iou_sum == cell.tp


def _single_class_frame(pred_row, gt_row):
    p = pan([pred_row], [[1 if c == 26 else 0 for c in pred_row]])
    g = pan([gt_row], [[1 if c == 26 else 0 for c in gt_row]])
    d = dep(np.full((1, len(gt_row)), 10.0))
    return _frame(p, d, g, d)


def test_single_tp_iou_075():
    # pred car 3 px inside GT car 4 px: IoU 3/4
    f = _single_class_frame([7, 26, 26, 26, 7, 7, 7, 7], [26, 26, 26, 26, 7, 7, 7, 7])
    acc = frame_stats(f, 0.25, ONE_CLASS, CFG)
    rep = finalize(acc, ONE_CLASS, PdcqConfig(lambdas=(0.25,), deltas=(1,)))
    assert rep.cells[(0.25, 1)].per_class[26].pq == pytest.approx(75.0, abs=1e-12)


def test_tp_plus_fp_gives_53_33():
    # GT car 5 px; pred car 4 of them (IoU 0.8) plus a separate FP car instance
    gc = [26, 26, 26, 26, 26, 7, 7, 7, 7, 7]
    pc = [26, 26, 26, 26, 7, 7, 7, 26, 26, 7]
    g = pan([gc], [[1, 1, 1, 1, 1, 0, 0, 0, 0, 0]])
    p = pan([pc], [[1, 1, 1, 1, 0, 0, 0, 2, 2, 0]])
    d = dep(np.full((1, 10), 10.0))
    acc = frame_stats(_frame(p, d, g, d), 0.25, ONE_CLASS, CFG)
    rep = finalize(acc, ONE_CLASS, PdcqConfig(lambdas=(0.25,), deltas=(1,)))
    got = rep.cells[(0.25, 1)].per_class[26].pq
    oracle = brute_force_pq(p, g, ONE_CLASS)[26].pq
    assert got == pytest.approx(100 * 0.8 / 1.5, abs=1e-12)
    assert got == pytest.approx(oracle, abs=1e-12)


def test_finalize_single_pair_identity():
    acc = StatAccumulator(ONE_CLASS)
    acc.cells[(26, 0.25, 1)] = CellStats(Fraction(3, 5), 1, 0, 0)
    acc.cells[(26, INF, 1)] = CellStats(Fraction(3, 5), 1, 0, 0)
    from panodepth.depth import DepthMetrics
    acc.add_depth(("s", 0, 1), DepthMetrics.empty())
    rep = finalize(acc, ONE_CLASS, PdcqConfig(lambdas=(0.25,), deltas=(1,)))
    c = rep.cells[(0.25, 1)].per_class[26]
    assert (c.pq, c.sq, c.rq) == pytest.approx((60.0, 60.0, 100.0))
    assert c.pq == pytest.approx(c.sq * c.rq / 100, abs=1e-9)


def test_overall_mean_and_sum():
    from panodepth.depth import DepthMetrics
    acc = StatAccumulator(ONE_CLASS)
    for d, v in zip((1, 3, 5), (Fraction(2, 5), Fraction(3, 10), Fraction(1, 5))):
        for lam in (0.25, INF):
            acc.cells[(26, lam, d)] = CellStats(v, 1, 0, 0)
        acc.add_depth(("s", 0, d), DepthMetrics.empty())
    mean = finalize(acc, ONE_CLASS, PdcqConfig(lambdas=(0.25,)))
    assert [mean.pdcq(0.25, d) for d in (1, 3, 5)] == pytest.approx([40.0, 30.0, 20.0])
    assert mean.overall[0.25] == pytest.approx(30.0)
    total = finalize(acc, ONE_CLASS, PdcqConfig(lambdas=(0.25,), overall_aggregation="sum"))
    assert total.overall[0.25] == pytest.approx(90.0)


def test_empty_accumulator():
    with pytest.raises(EmptyAccumulatorError):
        finalize(StatAccumulator(ONE_CLASS), ONE_CLASS, CFG)


def test_uniform_double_depth_vanishes():
    rng = np.random.default_rng(5)
    _, _, g, gd = random_instance(rng, 16, 16)
    gd = dep(np.where(gd.depth > 0, np.clip(gd.depth, 1.0, 40.0), 0.0))
    acc = frame_stats_multi(_frame(g, dep(2 * gd.depth), g, gd), [0.5, INF], DEFAULT_CLASSES, CFG)
    rep = finalize(acc, DEFAULT_CLASSES, CFG.__class__(lambdas=(0.5,), deltas=(1,)))
    # every valid pixel is an outlier; only invalid-depth pixels can survive
    valid = gd.valid & (gd.depth >= 0.5) & (gd.depth <= 80)
    if valid.all():
        assert rep.pdcq(0.5, 1) == 0.0
    assert rep.pdcq(0.5, 1) <= rep.pq(1)


def test_unknown_delta_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        frame_stats(_random_frame(rng, delta=2), 0.25, DEFAULT_CLASSES, CFG)


def _random_acc(seed, n=3):
    rng = np.random.default_rng(seed)
    frames = [_random_frame(rng, 12, t=seed * 10 + i, delta=int(rng.choice([1, 3, 5]))) for i in range(n)]
    return evaluate_frames(frames, DEFAULT_CLASSES, CFG)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_merge_laws(a, b, c):
    A, B, C = _random_acc(a), _random_acc(b + 1), _random_acc(c + 2)
    empty = StatAccumulator(DEFAULT_CLASSES)
    assert merge(A, empty) == A
    assert merge(A, B) == merge(B, A)
    assert merge(merge(A, B), C) == merge(A, merge(B, C))


def test_merge_class_table_mismatch():
    with pytest.raises(ValueError):
        merge(StatAccumulator(ONE_CLASS), StatAccumulator(DEFAULT_CLASSES))


def test_partition_order_gives_identical_report():
    rng = np.random.default_rng(11)
    frames = [_random_frame(rng, 16, t=i, delta=(1, 3, 5)[i % 3]) for i in range(12)]
    seq = finalize(evaluate_frames(frames, DEFAULT_CLASSES, CFG), DEFAULT_CLASSES, CFG).to_dict()
    perm = rng.permutation(len(frames))
    parts = [evaluate_frames([frames[i] for i in perm[k::3]], DEFAULT_CLASSES, CFG) for k in range(3)]
    merged = merge(merge(parts[2], parts[0]), parts[1])
    assert finalize(merged, DEFAULT_CLASSES, CFG).to_dict() == seq


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_report_range_and_structure(seed):
    rng = np.random.default_rng(seed)
    frames = [_random_frame(rng, 16, t=i, delta=(1, 3, 5)[i % 3]) for i in range(3)]
    rep = finalize(evaluate_frames(frames, DEFAULT_CLASSES, CFG), DEFAULT_CLASSES, CFG)
    for cell in rep.cells.values():
        for s in (cell.all, cell.things, cell.stuff):
            if s.pq is None:
                continue
            assert 0 <= s.pq <= 100 and 0 <= s.rq <= 100 and 0 <= s.sq <= 100 + 1e-9
            if s.rq > 0:
                assert abs(s.pq - s.sq * s.rq / 100) <= 1e-9
        for c in cell.per_class.values():
            assert 0 <= c.pq <= 100
            if c.rq > 0:
                assert abs(c.pq - c.sq * c.rq / 100) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_void_set_nesting_across_lambdas(seed):
    from panodepth.depth import abs_rel_map, inlier_mask
    rng = np.random.default_rng(seed)
    f = _random_frame(rng, 16)
    err = abs_rel_map(f.pred_depth, f.gt_depth, CFG)
    voids = [apply_depth_filter(f.pred_pan, inlier_mask(err, l), 255).class_ids == 255 for l in (0.1, 0.25, 0.5)]
    assert np.all(voids[0][voids[1]]) and np.all(voids[1][voids[2]])


def test_segment_filter_mode_demotes_bad_depth_pairs():
    gc = [26, 26, 26, 26, 7, 7]
    g = pan([gc], [[1, 1, 1, 1, 0, 0]])
    gd = dep([[10.0] * 6])
    pd = dep([[13.0, 13.0, 13.0, 13.0, 10.0, 10.0]])  # car error 0.3
    f = _frame(g, pd, g, gd)
    seg = PdcqConfig(filter_mode="segment")
    acc = frame_stats_multi(f, [0.25, 0.5], ONE_CLASS, seg)
    assert (acc.cells[(26, 0.25, 1)].tp, acc.cells[(26, 0.25, 1)].fp, acc.cells[(26, 0.25, 1)].fn) == (0, 1, 1)
    assert acc.cells[(26, 0.5, 1)].tp == 1

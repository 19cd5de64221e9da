import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dep
from panodepth.core import PdcqConfig
from panodepth.depth import DepthMetrics, abs_rel_map, average_metrics, depth_metrics, inlier_mask

CFG = PdcqConfig()


def _scalar_metrics(pred, gt, lo=0.5, hi=80.0):
    """Loop-per-pixel reference."""
    n = 0
    ar = sq = 0.0
    c = [0, 0, 0]
    for p, g in zip(pred, gt):
        if not (g > 0 and lo <= g <= hi):
            continue
        n += 1
        ar += abs(p - g) / g
        sq += (p - g) ** 2
        r = max(p / g, g / p) if p > 0 else math.inf
        for k in range(3):
            if r < 1.25 ** (k + 1):
                c[k] += 1
    return ar / n, math.sqrt(sq / n), c[0] / n, c[1] / n, c[2] / n


def test_hand_fixture():
    m = depth_metrics(dep([[1.0, 8.0]]), dep([[2.0, 4.0]]), CFG)
    assert abs(m.abs_rel - 0.75) <= 1e-12
    assert abs(m.rmse - math.sqrt(8.5)) <= 1e-12
    assert (m.delta1, m.delta2, m.delta3) == (0.0, 0.0, 0.0)
    assert _scalar_metrics([1.0, 8.0], [2.0, 4.0])[:2] == pytest.approx((0.75, math.sqrt(8.5)), abs=1e-12)


def test_identity_and_uniform_scaling():
    g = np.linspace(1, 50, 30).reshape(5, 6)
    m = depth_metrics(dep(g), dep(g), CFG)
    assert (m.abs_rel, m.rmse, m.delta1, m.delta2, m.delta3) == (0.0, 0.0, 1.0, 1.0, 1.0)
    m = depth_metrics(dep(1.2 * g), dep(g), CFG)
    assert m.abs_rel == pytest.approx(0.2, abs=1e-12)
    assert m.delta1 == 1.0


def test_no_valid_pixels_is_empty_not_nan():
    m = depth_metrics(dep([[3.0, 4.0]]), dep([[0.0, 100.0]]), CFG)
    assert m.is_empty and m.abs_rel is None and m.valid_pixel_count == 0
    assert average_metrics([m]).is_empty


def test_abs_rel_examples():
    e = abs_rel_map(dep([[12.0, 5.0, 7.0]]), dep([[10.0, 5.0, 0.0]]), CFG)
    assert e.errors[0, 0] == pytest.approx(0.2)
    assert e.errors[0, 1] == 0.0
    assert not e.valid[0, 2]


def test_inlier_examples():
    e = abs_rel_map(dep([[12.0, 99.0]]), dep([[10.0, 0.0]]), CFG)
    assert inlier_mask(e, 0.25)[0, 0]
    assert not inlier_mask(e, 0.1)[0, 0]
    assert inlier_mask(e, 0.1)[0, 1] and inlier_mask(e, 1e-9)[0, 1]
    with pytest.raises(ValueError):
        inlier_mask(e, 0.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        abs_rel_map(dep([[1.0]]), dep([[1.0, 2.0]]), CFG)
    with pytest.raises(ValueError):
        depth_metrics(dep([[1.0]]), dep([[1.0, 2.0]]), CFG)


depth_arrays = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=60, deadline=None)
@given(depth_arrays, st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_inlier_nesting(rng, a, b):
    l1, l2 = min(a, b), max(a, b)
    g = rng.choice([0.0, 0.3, 5.0, 20.0, 90.0], size=(8, 8)) * rng.uniform(0.5, 1.5, size=(8, 8))
    p = g * rng.uniform(0.0, 3.0, size=(8, 8))
    e = abs_rel_map(dep(p), dep(g), CFG)
    m1, m2 = inlier_mask(e, l1), inlier_mask(e, l2)
    assert np.all(m2[m1])


@settings(max_examples=60, deadline=None)
@given(depth_arrays)
def test_delta_ordering_symmetry_and_scalar_reference(rng):
    g = rng.uniform(0.6, 79.0, size=(6, 6))
    p = g * rng.uniform(0.4, 2.5, size=(6, 6))
    m = depth_metrics(dep(p), dep(g), CFG)
    assert m.delta1 <= m.delta2 <= m.delta3
    swapped = depth_metrics(dep(g), dep(p), PdcqConfig(min_depth=0.0, max_depth=250.0))
    assert (swapped.delta1, swapped.delta2, swapped.delta3) == (m.delta1, m.delta2, m.delta3)
    ref = _scalar_metrics(p.ravel().tolist(), g.ravel().tolist())
    got = (m.abs_rel, m.rmse, m.delta1, m.delta2, m.delta3)
    assert got == pytest.approx(ref, abs=1e-12)


def test_average_skips_empty_frames_and_is_order_free():
    a = DepthMetrics(0.1, 1.0, 0.9, 0.95, 1.0, 10)
    b = DepthMetrics(0.3, 3.0, 0.5, 0.75, 0.9, 5)
    avg = average_metrics([a, DepthMetrics.empty(), b])
    assert avg.abs_rel == pytest.approx(0.2) and avg.rmse == pytest.approx(2.0)
    assert avg.valid_pixel_count == 15
    assert average_metrics([b, a]) == average_metrics([a, b])

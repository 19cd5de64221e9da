import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panodepth.baselines import ObservedWindow, const_velocity_forecast, forecast, last_seen_forecast
from panodepth.core import PanopticMap, validate
from panodepth.synth import DEFAULT_CLASSES, SceneSpec, StuffLayer, Thing, brute_force_pq, random_scene_spec, render_sequence


def _window(seq, t, k=3):
    return ObservedWindow(seq[max(0, t - k): t + 1])


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        ObservedWindow([])


def test_last_seen_returns_last_frame():
    seq = render_sequence(random_scene_spec(np.random.default_rng(0)))
    w = _window(seq, 5)
    assert last_seen_forecast(w, 3) == seq[5]


def test_static_scene_is_perfect():
    s = SceneSpec(40, 30, (StuffLayer(7, 40.0),), (Thing(26, "rect", (6, 4), (10.0, 10.0), depth=8.0),), 8)
    seq = render_sequence(s)
    for name in ("last-seen", "const-velocity"):
        p, d = forecast(name, _window(seq, 3), 3, DEFAULT_CLASSES)
        assert p == seq[6][0] and d == seq[6][1]
        assert all(v.pq == 100.0 for v in brute_force_pq(p, seq[6][0], DEFAULT_CLASSES).values())


def test_mover_degrades_last_seen_with_horizon():
    s = SceneSpec(48, 20, (StuffLayer(7, 40.0),), (Thing(26, "rect", (8, 6), (8.0, 10.0), (1.0, 0.0), 8.0),), 10)
    seq = render_sequence(s)
    w = _window(seq, 3)
    score = {d: brute_force_pq(last_seen_forecast(w, d)[0], seq[3 + d][0], DEFAULT_CLASSES)[26].pq for d in (1, 5)}
    assert score[5] <= score[1]


def test_const_velocity_exact_on_rigid_mover():
    s = SceneSpec(48, 20, (StuffLayer(7, 40.0),), (Thing(26, "rect", (6, 4), (8.0, 10.0), (2.0, 0.0), 8.0),), 10)
    seq = render_sequence(s)
    p, d = const_velocity_forecast(_window(seq, 3), 3, DEFAULT_CLASSES)
    assert np.array_equal(p.class_ids == 26, seq[6][0].class_ids == 26)
    assert brute_force_pq(p, seq[6][0], DEFAULT_CLASSES)[26].pq == 100.0
    assert p == seq[6][0] and d == seq[6][1]


def test_new_instance_copied_untranslated():
    s = SceneSpec(48, 20, (StuffLayer(7, 40.0),), (Thing(26, "rect", (6, 4), (8.0, 10.0), (2.0, 0.0), 8.0),), 4)
    seq = render_sequence(s)
    prev = (PanopticMap.filled(20, 48, 7), seq[0][1])
    w = ObservedWindow([prev, seq[1]])
    p, _ = const_velocity_forecast(w, 3, DEFAULT_CLASSES)
    assert p == seq[1][0]


def test_collision_resolved_by_depth_and_holes_filled():
    s = SceneSpec(
        40, 20, (StuffLayer(23, 90.0, (0, 5)), StuffLayer(7, 40.0, (5, 20))),
        (Thing(26, "rect", (4, 4), (6.0, 10.0), (3.0, 0.0), 12.0),
         Thing(24, "rect", (4, 4), (18.0, 10.0), (0.0, 0.0), 5.0)), 4)
    seq = render_sequence(s)
    p, d = const_velocity_forecast(ObservedWindow(seq[0:2]), 3, DEFAULT_CLASSES)
    # car lands on the nearer static person: the person survives
    assert np.array_equal(p.class_ids == 24, seq[1][0].class_ids == 24)
    assert np.count_nonzero(p.class_ids == 26) < 16
    assert not np.any(p.class_ids == 255)
    assert validate(p, d, DEFAULT_CLASSES).ok


def test_one_frame_window_falls_back(caplog):
    seq = render_sequence(random_scene_spec(np.random.default_rng(1)))
    w = ObservedWindow([seq[4]])
    with caplog.at_level("INFO"):
        out = forecast("const-velocity", w, 3, DEFAULT_CLASSES)
    assert out == seq[4]
    assert "last-seen" in caplog.text
    with pytest.raises(ValueError):
        const_velocity_forecast(w, 3, DEFAULT_CLASSES)
    with pytest.raises(KeyError):
        forecast("flow", w, 3, DEFAULT_CLASSES)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 3, 5]))
def test_forecasts_are_valid(seed, delta):
    seq = render_sequence(random_scene_spec(np.random.default_rng(seed)))
    w = _window(seq, 4)
    for name in ("last-seen", "const-velocity"):
        p, d = forecast(name, w, delta, DEFAULT_CLASSES)
        assert validate(p, d, DEFAULT_CLASSES).ok

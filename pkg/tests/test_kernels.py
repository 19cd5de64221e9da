import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panodepth import kernels
from panodepth.synth import DEFAULT_CLASSES, random_instance

BACKENDS = kernels.available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def test_selected_backend_is_available():
    assert kernels.BACKEND in BACKENDS


def _inputs(seed, size):
    rng = np.random.default_rng(seed)
    p, pd, g, gd = random_instance(rng, size, size)
    return p, pd, g, gd


@needs_both
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40), st.booleans())
def test_depth_pass_equivalent(seed, size, inclusive):
    _, pd, _, gd = _inputs(seed, size)
    lams = np.array([0.1, 0.25, 0.5])
    lv_c, s_c = BACKENDS["cython"].depth_pass(pd.depth, gd.depth, lams, 0.5, 80.0, inclusive)
    lv_p, s_p = BACKENDS["python"].depth_pass(pd.depth, gd.depth, lams, 0.5, 80.0, inclusive)
    assert np.array_equal(np.asarray(lv_c), np.asarray(lv_p))
    assert s_c[0] == s_p[0] and tuple(s_c[3:]) == tuple(s_p[3:])
    assert s_c[1] == pytest.approx(s_p[1], rel=1e-12, abs=1e-12)
    assert s_c[2] == pytest.approx(s_p[2], rel=1e-12, abs=1e-12)


@needs_both
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
def test_labels_and_pairs_equivalent(seed, size):
    p, pd, g, gd = _inputs(seed, size)
    lut = DEFAULT_CLASSES.kind_lut()
    out = {}
    for name, mod in BACKENDS.items():
        gi, gcodes, gareas = mod.label_segments(g.class_ids, g.instance_ids, lut)
        pi, pcodes, pareas = mod.label_segments(p.class_ids, p.instance_ids, lut)
        lv, _ = mod.depth_pass(pd.depth, gd.depth, np.array([0.1, 0.25, 0.5]), 0.5, 80.0, True)
        pc = mod.pair_counts(np.asarray(gi), np.asarray(pi), len(gcodes), len(pcodes), np.asarray(lv), 4)
        out[name] = [np.asarray(x) for x in (gi, gcodes, gareas, pi, pcodes, pareas, *pc)]
    for a, b in zip(out["cython"], out["python"]):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_thing_instance_overflow_rejected(name):
    cls = np.array([[26]], dtype=np.uint8)
    inst = np.array([[1000]], dtype=np.uint16)
    with pytest.raises(ValueError):
        BACKENDS[name].label_segments(cls, inst, DEFAULT_CLASSES.kind_lut())


def test_pure_python_backend_passes_oracle_check():
    env = dict(os.environ, PANODEPTH_PURE_PYTHON="1")
    code = (
        "from panodepth import kernels; assert kernels.BACKEND == 'python';"
        "from panodepth.cli import main; raise SystemExit(main(['oracle-check', '--size', '16', '--trials', '30']))"
    )
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from conftest import SMALL_CLASSES, dep, pan
from panodepth import ingest
from panodepth.core import DepthMap, PanopticMap, PdcqConfig


def _write_raw(path, raw):
    ingest.write_png16(np.asarray(raw, dtype=np.uint16), path)


def test_panoptic_decoding_arithmetic():
    p = ingest.decode_panoptic(np.array([[26003, 7000, 65535]]))
    assert p.label_at(0, 0) == (26, 3)
    assert p.label_at(0, 1) == (7, 0)
    assert p.label_at(0, 2) == (255, 0)


def test_depth_decoding_arithmetic():
    d = ingest.decode_depth(np.array([[3200, 0, 65535]]))
    assert d.depth[0, 0] == 12.5
    assert not d.valid[0, 1]
    assert d.depth[0, 2] == pytest.approx(255.996, abs=1e-3)


def test_depth_quantization(tmp_path):
    path = tmp_path / "d.png"
    ingest.write_depth(dep([[12.5, 1.001, 0.0]]), path)
    raw = ingest.read_png16(path)
    assert raw.tolist() == [[3200, 256, 0]]
    back = ingest.read_depth(path).depth
    assert back[0, 0] == 12.5
    assert back[0, 1] == 1.0 and abs(back[0, 1] - 1.001) <= 1 / 512
    assert back[0, 2] == 0.0


@pytest.mark.parametrize("value", [np.inf, -0.5, 300.0, 0.001])
def test_unencodable_depth(tmp_path, value):
    with pytest.raises(ingest.EncodingError):
        ingest.write_depth(dep([[value]]), tmp_path / "d.png")


def test_instance_1000_unencodable(tmp_path):
    with pytest.raises(ingest.EncodingError):
        ingest.write_panoptic(pan([[26]], [[1000]]), tmp_path / "p.png")


def test_all_void_round_trip(tmp_path):
    p = pan(np.full((5, 3), 255))
    ingest.write_panoptic(p, tmp_path / "p.png")
    assert ingest.read_panoptic(tmp_path / "p.png") == p


def test_random_map_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    cls = rng.choice([7, 23, 24, 26, 255], size=(32, 32)).astype(np.uint8)
    inst = np.where(np.isin(cls, [24, 26]), rng.integers(0, 1000, size=(32, 32)), 0).astype(np.uint16)
    p = PanopticMap(cls, inst)
    ingest.write_panoptic(p, tmp_path / "p.png")
    assert ingest.read_panoptic(tmp_path / "p.png") == p


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 255.99, allow_nan=False), min_size=1, max_size=64))
def test_depth_round_trip_bound(values):
    d = np.array(values)
    d[(d > 0) & (d < 1 / 512)] = 0.0
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as tmp:
        path = pathlib.Path(tmp) / "d.png"
        ingest.write_depth(DepthMap(d[None, :]), path)
        back = ingest.read_depth(path).depth[0]
    assert np.all(np.abs(back - d) <= 1 / 512)
    assert np.array_equal(back == 0, d == 0)


def test_distinct_read_errors(tmp_path):
    missing = tmp_path / "none.png"
    with pytest.raises(ingest.UnreadableImageError):
        ingest.read_panoptic(missing)
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not a png at all, really not one")
    with pytest.raises(ingest.UnreadableImageError):
        ingest.read_panoptic(junk)
    eight = tmp_path / "eight.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(eight)
    with pytest.raises(ingest.BitDepthError):
        ingest.read_panoptic(eight)
    rgb = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(rgb)
    with pytest.raises(ingest.ChannelCountError):
        ingest.read_depth(rgb)
    assert len({ingest.UnreadableImageError, ingest.BitDepthError, ingest.ChannelCountError}) == 3


def _make_dataset(root, n_frames, seq_id="s0", observed_window=3, deltas=(1, 3, 5)):
    frames = []
    for k in range(n_frames):
        p, d = root / "gt" / f"{k}_pan.png", root / "gt" / f"{k}_depth.png"
        ingest.write_panoptic(pan(np.full((4, 4), 7)), p)
        ingest.write_depth(dep(np.full((4, 4), 10.0)), d)
        frames.append(ingest.FrameRecord(k, p, d))
    m = ingest.Manifest("test", SMALL_CLASSES, (ingest.SequenceRecord(seq_id, tuple(frames)),),
                        observed_window, deltas, root)
    ingest.write_manifest(m, root / "manifest.json")
    return ingest.load_manifest(root / "manifest.json")


def test_manifest_round_trip(tmp_path):
    m = _make_dataset(tmp_path, 4)
    assert m.class_table == SMALL_CLASSES
    assert [f.index for f in m.sequences[0].frames] == [0, 1, 2, 3]
    assert m.sequences[0].frames[0].panoptic == tmp_path / "gt" / "0_pan.png"
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["sequences"][0]["frames"][0]["panoptic"] == "gt/0_pan.png"


def test_manifest_errors(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    with pytest.raises(ingest.ManifestError):
        ingest.load_manifest(bad)
    bad.write_text(json.dumps({"classes": []}))
    with pytest.raises(ingest.ManifestError):
        ingest.load_manifest(bad)
    bad.write_text(json.dumps({"classes": [], "sequences": [{"id": "a", "frames": [
        {"index": 0, "panoptic": "x.png", "depth": "y.png"}]}]}))
    with pytest.raises(ingest.ManifestError):
        ingest.load_manifest(bad)


def _predict_all(manifest, root, config):
    layout = ingest.PredictionLayout(root)
    for seq, t, d, _ in ingest.expected_targets(manifest, config.deltas):
        layout.write(seq.sequence_id, t, d, pan(np.full((4, 4), 7)), dep(np.full((4, 4), 10.0)))
    return layout


def test_six_frame_sequence_only_offers_existing_targets(tmp_path):
    m = _make_dataset(tmp_path, 6)
    cfg = PdcqConfig(deltas=(1, 2, 3, 5))
    layout = _predict_all(m, tmp_path / "pred", cfg)
    res = ingest.resolve_eval_frames(m, layout, cfg)
    at3 = sorted(f.delta for f in res.frames if f.t == 3)
    assert at3 == [1, 2]
    assert res.missing == []


def test_ten_frame_sequence_targets(tmp_path):
    m = _make_dataset(tmp_path, 10)
    layout = _predict_all(m, tmp_path / "pred", PdcqConfig())
    refs, missing = ingest.plan_eval_frames(m, layout, PdcqConfig())
    at4 = [r for r in refs if r.t == 4]
    assert [(r.delta, r.gt_panoptic.name) for r in at4] == [(1, "5_pan.png"), (3, "7_pan.png"), (5, "9_pan.png")]
    assert not missing


def test_empty_prediction_dir_reports_every_pair(tmp_path):
    m = _make_dataset(tmp_path, 10)
    res = ingest.resolve_eval_frames(m, ingest.PredictionLayout(tmp_path / "nothing"), PdcqConfig())
    assert len(res) == 0
    expected = ingest.expected_targets(m, PdcqConfig().deltas)
    assert [(x.sequence_id, x.t, x.delta) for x in res.missing] == [(s.sequence_id, t, d) for s, t, d, _ in expected]


def test_resolution_is_order_stable(tmp_path):
    m = _make_dataset(tmp_path, 10)
    layout = _predict_all(m, tmp_path / "pred", PdcqConfig())
    a, _ = ingest.plan_eval_frames(m, layout, PdcqConfig())
    b, _ = ingest.plan_eval_frames(m, layout, PdcqConfig())
    assert a == b
    assert [r.key for r in a] == sorted(r.key for r in a)


def test_unreadable_gt_is_an_error(tmp_path):
    m = _make_dataset(tmp_path, 5)
    layout = _predict_all(m, tmp_path / "pred", PdcqConfig())
    (tmp_path / "gt" / "4_pan.png").write_bytes(b"garbage")
    with pytest.raises(ingest.IngestError):
        ingest.resolve_eval_frames(m, layout, PdcqConfig())

"""Synthetic panoptic-depth sequences and naive reference metrics.

The renderer paints full-width stuff bands back to front, then things
(rectangles or ellipses) moving at constant velocity, nearest thing last.
Everything is integer or exactly-rounded arithmetic, so renders are
bit-reproducible.

``brute_force_pq`` / ``brute_force_pdcq`` recompute the metric from pixel
sets with no code shared with :mod:`panodepth.match` or :mod:`panodepth.pdcq`.
They are slow on purpose and refuse maps larger than 64x64.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from panodepth.core import ClassInfo, ClassTable, DepthMap, PanopticMap

ORACLE_MAX_SIDE = 64
MAX_RENDER_DEPTH = 65535 / 256.0

DEFAULT_CLASSES = ClassTable(
    (
        ClassInfo(7, "road", False),
        ClassInfo(8, "sidewalk", False),
        ClassInfo(11, "building", False),
        ClassInfo(21, "vegetation", False),
        ClassInfo(23, "sky", False),
        ClassInfo(24, "person", True),
        ClassInfo(26, "car", True),
        ClassInfo(33, "bicycle", True),
    ),
    void_class_id=255,
)


class SceneSpecError(ValueError):
    pass


@dataclass(frozen=True)
class StuffLayer:
    class_id: int
    depth: float
    rows: Optional[tuple[int, int]] = None  # [start, stop); None = full frame


@dataclass(frozen=True)
class Thing:
    class_id: int
    shape: str
    size: tuple[int, int]            # (width, height) in pixels
    position: tuple[float, float]    # (x, y) center at frame 0
    velocity: tuple[float, float] = (0.0, 0.0)
    depth: float = 10.0
    depth_rate: float = 0.0
    instance_id: Optional[int] = None


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    stuff: tuple[StuffLayer, ...]
    things: tuple[Thing, ...] = ()
    frame_count: int = 2
    seed: int = 0
    # keep GT depth only on every n-th row, like projected LiDAR scan lines
    depth_row_stride: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SceneSpecError("width and height must be positive")
        if self.frame_count < 2:
            raise SceneSpecError(f"frame_count must be at least 2, got {self.frame_count}")
        if self.depth_row_stride < 1:
            raise SceneSpecError("depth_row_stride must be >= 1")
        if not self.stuff:
            raise SceneSpecError("at least one stuff layer is required")
        covered = np.zeros(self.height, dtype=bool)
        for layer in self.stuff:
            if not 0 < layer.depth <= MAX_RENDER_DEPTH:
                raise SceneSpecError(f"stuff depth {layer.depth} outside (0, {MAX_RENDER_DEPTH}]")
            a, b = layer.rows if layer.rows is not None else (0, self.height)
            if not 0 <= a < b <= self.height:
                raise SceneSpecError(f"stuff rows {layer.rows} outside the frame")
            covered[a:b] = True
        if not covered.all():
            raise SceneSpecError("stuff layers leave rows uncovered; renders must not contain void")
        for th in self.things:
            if th.shape not in ("rect", "ellipse"):
                raise SceneSpecError(f"unknown shape {th.shape!r}")
            if th.size[0] <= 0 or th.size[1] <= 0:
                raise SceneSpecError("thing sizes must be positive")
        for k in range(self.frame_count):
            depths = [th.depth + k * th.depth_rate for th in self.things]
            if any(not 0 < d <= MAX_RENDER_DEPTH for d in depths):
                raise SceneSpecError(f"thing depth leaves (0, {MAX_RENDER_DEPTH}] at frame {k}")
            if len(set(depths)) != len(depths):
                raise SceneSpecError(f"two things share a depth at frame {k}; occlusion order is ambiguous")
        ids = self.instance_ids()
        if any(not 1 <= i <= 999 for i in ids):
            raise SceneSpecError("instance ids must lie in [1, 999]")
        labels = [(th.class_id, i) for th, i in zip(self.things, ids)]
        if len(set(labels)) != len(labels):
            raise SceneSpecError("duplicate (class, instance) labels")

    def instance_ids(self) -> list[int]:
        counters: dict[int, int] = {}
        out = []
        for th in self.things:
            if th.instance_id is not None:
                out.append(th.instance_id)
                continue
            counters[th.class_id] = counters.get(th.class_id, 0) + 1
            out.append(counters[th.class_id])
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stuff"] = [{k: v for k, v in asdict(s).items() if v is not None} for s in self.stuff]
        d["things"] = [{k: v for k, v in asdict(t).items() if v is not None} for t in self.things]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            stuff = tuple(
                StuffLayer(int(s["class_id"]), float(s["depth"]),
                           tuple(s["rows"]) if s.get("rows") is not None else None)
                for s in d["stuff"])
            things = tuple(
                Thing(
                    class_id=int(t["class_id"]),
                    shape=str(t.get("shape", "rect")),
                    size=(int(t["size"][0]), int(t["size"][1])),
                    position=(float(t["position"][0]), float(t["position"][1])),
                    velocity=(float(t.get("velocity", (0, 0))[0]), float(t.get("velocity", (0, 0))[1])),
                    depth=float(t["depth"]),
                    depth_rate=float(t.get("depth_rate", 0.0)),
                    instance_id=int(t["instance_id"]) if t.get("instance_id") is not None else None,
                )
                for t in d.get("things", ()))
            return cls(int(d["width"]), int(d["height"]), stuff, things, int(d.get("frame_count", 2)),
                       int(d.get("seed", 0)), int(d.get("depth_row_stride", 1)))
        except (KeyError, TypeError, IndexError) as exc:
            raise SceneSpecError(f"malformed scene spec: {exc}") from exc


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def thing_mask(th: Thing, frame: int, height: int, width: int) -> np.ndarray:
    cx = _round_half_up(th.position[0] + frame * th.velocity[0])
    cy = _round_half_up(th.position[1] + frame * th.velocity[1])
    w, h = th.size
    mask = np.zeros((height, width), dtype=bool)
    if th.shape == "rect":
        x0, y0 = cx - w // 2, cy - h // 2
        mask[max(y0, 0):max(y0 + h, 0), max(x0, 0):max(x0 + w, 0)] = True
        return mask
    # (2dx/w)^2 + (2dy/h)^2 <= 1 in integers
    ys, xs = np.ogrid[0:height, 0:width]
    dx = (xs - cx).astype(np.int64)
    dy = (ys - cy).astype(np.int64)
    return (4 * dx * dx * h * h + 4 * dy * dy * w * w) <= w * w * h * h


def render_frame(spec: SceneSpec, frame: int) -> tuple[PanopticMap, DepthMap]:
    h, w = spec.height, spec.width
    cls = np.zeros((h, w), dtype=np.uint8)
    inst = np.zeros((h, w), dtype=np.uint16)
    depth = np.zeros((h, w), dtype=np.float64)
    for layer in spec.stuff:
        a, b = layer.rows if layer.rows is not None else (0, h)
        cls[a:b] = layer.class_id
        depth[a:b] = layer.depth
    ids = spec.instance_ids()
    order = sorted(range(len(spec.things)), key=lambda i: -(spec.things[i].depth + frame * spec.things[i].depth_rate))
    for i in order:
        th = spec.things[i]
        m = thing_mask(th, frame, h, w)
        cls[m] = th.class_id
        inst[m] = ids[i]
        depth[m] = th.depth + frame * th.depth_rate
    if spec.depth_row_stride > 1:
        keep = (np.arange(h) % spec.depth_row_stride) == 0
        depth[~keep] = 0.0
    return PanopticMap(cls, inst), DepthMap(depth)


def render_sequence(spec: SceneSpec) -> list[tuple[PanopticMap, DepthMap]]:
    return [render_frame(spec, k) for k in range(spec.frame_count)]


def class_table_for(specs: Sequence[SceneSpec], base: ClassTable = DEFAULT_CLASSES) -> ClassTable:
    """``base`` plus a generic entry for any class the specs use that it lacks."""
    used_things = {t.class_id for s in specs for t in s.things}
    used_stuff = {l.class_id for s in specs for l in s.stuff}
    entries = {c.id: c for c in base.classes}
    for cid in sorted(used_things | used_stuff):
        if cid not in entries:
            entries[cid] = ClassInfo(cid, f"class_{cid}", cid in used_things)
    return ClassTable(tuple(entries.values()), base.void_class_id)


# --- scene suites -----------------------------------------------------------


@dataclass
class SceneSuite:
    """A dataset of named scenes plus evaluation settings, as stored in JSON."""

    scenes: dict  # sequence_id -> SceneSpec
    classes: ClassTable = DEFAULT_CLASSES
    dataset_name: str = "synthetic"
    observed_window: int = 3
    deltas: tuple = (1, 3, 5)

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "classes": self.classes.to_dicts(),
            "void_class_id": self.classes.void_class_id,
            "eval": {"observed_window": self.observed_window, "deltas": list(self.deltas)},
            "scenes": [dict(sequence_id=k, **v.to_dict()) for k, v in self.scenes.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSuite":
        """Accepts a suite document or a single bare scene spec."""
        if "scenes" not in d:
            d = {"scenes": [dict(d, sequence_id=d.get("sequence_id", "seq0"))]}
        scenes = {}
        for i, s in enumerate(d["scenes"]):
            sid = str(s.get("sequence_id", f"seq{i}"))
            if sid in scenes:
                raise SceneSpecError(f"duplicate sequence id {sid!r}")
            scenes[sid] = SceneSpec.from_dict(s)
        if "classes" in d:
            classes = ClassTable.from_dicts(d["classes"], d.get("void_class_id", 255))
        else:
            classes = class_table_for(list(scenes.values()))
        ev = d.get("eval", {})
        return cls(scenes, classes, str(d.get("dataset_name", "synthetic")),
                   int(ev.get("observed_window", 3)), tuple(int(x) for x in ev.get("deltas", (1, 3, 5))))


def load_suite(path) -> SceneSuite:
    return SceneSuite.from_dict(json.loads(Path(path).read_text()))


def default_suite() -> SceneSuite:
    text = resources.files("panodepth").joinpath("data/default_scene.json").read_text()
    return SceneSuite.from_dict(json.loads(text))


def moving_scene(frame_count: int = 12, depth_row_stride: int = 2) -> SceneSpec:
    """Three movers in separate lanes over sky/building/road bands.

    Surface depths differ by more than a factor of 3, so a pixel carrying the
    wrong surface's depth is an outlier at every threshold up to 0.5 even
    after noise; only depth drift of correctly placed movers is
    threshold-dependent.
    """
    return SceneSpec(
        width=96,
        height=64,
        stuff=(
            StuffLayer(23, 200.0, (0, 16)),
            StuffLayer(11, 60.0, (16, 28)),
            StuffLayer(7, 45.0, (28, 64)),
        ),
        things=(
            Thing(26, "rect", (14, 8), (14.0, 34.0), (2.0, 0.0), 10.0, -0.25),
            Thing(26, "rect", (12, 7), (78.0, 46.0), (-3.0, 0.0), 12.0, 0.1),
            Thing(24, "ellipse", (5, 9), (20.0, 57.0), (1.0, 0.0), 3.0, 0.0),
        ),
        frame_count=frame_count,
        depth_row_stride=depth_row_stride,
    )


def random_scene_spec(rng: np.random.Generator, width: int = 96, height: int = 64, frame_count: int = 12,
                      n_things: Optional[int] = None, depth_row_stride: int = 2) -> SceneSpec:
    """Random constant-velocity scene: integer velocities, one mover per
    horizontal lane, movers fully inside the frame for the whole sequence."""
    while True:
        try:
            return _random_scene_spec(rng, width, height, frame_count, n_things, depth_row_stride)
        except SceneSpecError:  # rare depth collision between movers; draw again
            continue


def _random_scene_spec(rng, width, height, frame_count, n_things, depth_row_stride) -> SceneSpec:
    sky_rows = int(rng.integers(height // 8, height // 4))
    stuff = (
        StuffLayer(23, 200.0, (0, sky_rows)),
        StuffLayer(7, float(rng.uniform(40.0, 70.0)), (sky_rows, height)),
    )
    lane_h = 10
    lanes = list(range(sky_rows + 1, height - lane_h + 1, lane_h))
    if n_things is None:
        n_things = int(rng.integers(1, len(lanes) + 1))
    n_things = min(n_things, len(lanes))
    chosen = sorted(rng.choice(len(lanes), size=n_things, replace=False).tolist())
    things = []
    used_depths = set()
    for lane in chosen:
        top = lanes[lane]
        cls = int(rng.choice([24, 26, 33]))
        w = int(rng.integers(4, 15))
        h = int(rng.integers(4, lane_h + 1))
        vx = int(rng.integers(-3, 4))
        vy = 0
        travel = abs(vx) * (frame_count - 1)
        lo = w // 2 + 1 + (travel if vx < 0 else 0)
        hi = width - w + w // 2 - 1 - (travel if vx > 0 else 0)
        if hi < lo:
            vx = 0
            lo, hi = w // 2 + 1, width - w + w // 2 - 1
        x = int(rng.integers(lo, hi + 1))
        y = top + h // 2
        depth = float(rng.uniform(3.0, 12.0))
        while round(depth, 6) in used_depths:
            depth += 0.01
        used_depths.add(round(depth, 6))
        rate = float(rng.choice([0.0, 0.0, -0.2, 0.15]))
        shape = str(rng.choice(["rect", "ellipse"]))
        things.append(Thing(cls, shape, (w, h), (float(x), float(y)), (float(vx), float(vy)), depth, rate))
    return SceneSpec(width, height, stuff, tuple(things), frame_count, int(rng.integers(0, 2 ** 31)),
                     depth_row_stride)


# --- random evaluation instances ------------------------------------------


def _paint_blob(rng, h, w, max_size):
    bh = int(rng.integers(1, max(2, max_size)))
    bw = int(rng.integers(1, max(2, max_size)))
    y = int(rng.integers(0, h))
    x = int(rng.integers(0, w))
    if rng.random() < 0.5:
        m = np.zeros((h, w), dtype=bool)
        m[y:y + bh, x:x + bw] = True
        return m
    ys, xs = np.ogrid[0:h, 0:w]
    return ((xs - x) * 2 / bw) ** 2 + ((ys - y) * 2 / bh) ** 2 <= 1


def random_gt(rng: np.random.Generator, height: int, width: int, classes: ClassTable = DEFAULT_CLASSES,
              crowd_prob: float = 0.15, void_prob: float = 0.5):
    stuff, things = list(classes.stuff_ids), list(classes.thing_ids)
    cls = np.full((height, width), rng.choice(stuff), dtype=np.uint8)
    inst = np.zeros((height, width), dtype=np.uint16)
    depth = np.zeros((height, width), dtype=np.float64)
    depth[:] = rng.uniform(1.0, 95.0)
    big = max(3, min(height, width) // 2)
    for _ in range(int(rng.integers(1, 4))):
        m = _paint_blob(rng, height, width, big * 2)
        cls[m] = rng.choice(stuff)
        inst[m] = 0
        depth[m] = rng.uniform(1.0, 95.0)
    next_id: dict[int, int] = {}
    for _ in range(int(rng.integers(0, 9))):
        m = _paint_blob(rng, height, width, big)
        c = int(rng.choice(things))
        if rng.random() < crowd_prob:
            i = 0
        else:
            next_id[c] = next_id.get(c, 0) + 1
            i = next_id[c]
        cls[m] = c
        inst[m] = i
        depth[m] = rng.uniform(1.0, 95.0)
    if rng.random() < void_prob:
        for _ in range(int(rng.integers(1, 3))):
            m = _paint_blob(rng, height, width, big)
            cls[m] = classes.void_class_id
            inst[m] = 0
    depth *= 1.0 + rng.normal(0.0, 0.01, size=depth.shape)
    depth[rng.random(depth.shape) < 0.1] = 0.0
    return PanopticMap(cls, inst), DepthMap(np.clip(depth, 0.0, 250.0))


def perturb_prediction(rng: np.random.Generator, gt_pan: PanopticMap, gt_depth: DepthMap,
                       classes: ClassTable = DEFAULT_CLASSES):
    """A plausible, imperfect prediction derived from ground truth."""
    h, w = gt_pan.shape
    cls = gt_pan.class_ids.copy()
    inst = gt_pan.instance_ids.copy()
    stuff, things = list(classes.stuff_ids), list(classes.thing_ids)
    kind = classes.kind_lut()
    # void in GT becomes some stuff class in the prediction
    void = cls == classes.void_class_id
    cls[void] = rng.choice(stuff)
    # crowd regions become instances
    crowd = (kind[cls] == 2) & (inst == 0)
    inst[crowd] = 900
    labels = sorted({(int(c), int(i)) for c, i in zip(cls[kind[cls] == 2], inst[kind[cls] == 2])})
    for c, i in labels:
        m = (cls == c) & (inst == i)
        r = rng.random()
        if r < 0.25:
            dy, dx = (int(v) for v in rng.integers(-3, 4, size=2))
            moved = np.roll(np.roll(m, dy, axis=0), dx, axis=1)
            cls[m] = rng.choice(stuff)
            inst[m] = 0
            cls[moved] = c
            inst[moved] = i
        elif r < 0.35:
            cls[m] = rng.choice(things)
        elif r < 0.45:
            half = m & (np.arange(w)[None, :] < w // 2)
            inst[half] = 800 + i % 100
    for _ in range(int(rng.integers(0, 3))):
        m = _paint_blob(rng, h, w, max(3, min(h, w) // 3))
        c = int(rng.choice(things + stuff))
        cls[m] = c
        inst[m] = int(rng.integers(1, 700)) if c in things else 0
    noise = rng.random((h, w)) < 0.03
    cls[noise] = rng.choice(stuff, size=int(noise.sum()))
    inst[noise] = 0
    if rng.random() < 0.3:
        m = _paint_blob(rng, h, w, max(2, min(h, w) // 4))
        cls[m] = classes.void_class_id
        inst[m] = 0
    stuff_px = kind[cls] == 1
    inst[stuff_px] = 0

    base = gt_depth.depth.copy()
    base[base == 0] = rng.uniform(1.0, 90.0)
    eps_choices = np.array([0.0, 0.05, -0.05, 0.15, -0.15, 0.3, -0.3, 0.45, -0.45, 0.7, 1.0])
    eps = rng.choice(eps_choices, size=(h, w))
    eps += rng.normal(0.0, 0.02, size=(h, w))
    pred_depth = np.clip(base * (1.0 + eps), 0.0, 250.0)
    return PanopticMap(cls, inst), DepthMap(pred_depth)


def random_instance(rng: np.random.Generator, height: int, width: int, classes: ClassTable = DEFAULT_CLASSES):
    """Returns (pred_pan, pred_depth, gt_pan, gt_depth)."""
    gt_pan, gt_depth = random_gt(rng, height, width, classes)
    pred_pan, pred_depth = perturb_prediction(rng, gt_pan, gt_depth, classes)
    return pred_pan, pred_depth, gt_pan, gt_depth


# --- brute-force oracles ----------------------------------------------------


@dataclass(frozen=True)
class OracleScore:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int


def _pixel_sets(pan: PanopticMap, classes: ClassTable):
    """{(class, instance): set of (row, col)} plus the set of void pixels."""
    things = set(classes.thing_ids)
    stuff = set(classes.stuff_ids)
    segs: dict = {}
    void = set()
    rows, cols = pan.shape
    cl = pan.class_ids.tolist()
    il = pan.instance_ids.tolist()
    for r in range(rows):
        for c in range(cols):
            k = cl[r][c]
            if k in things:
                label = (k, il[r][c])
            elif k in stuff:
                label = (k, 0)
            else:
                void.add((r, c))
                continue
            segs.setdefault(label, set()).add((r, c))
    return segs, void


def brute_force_pq(pred: PanopticMap, gt: PanopticMap, classes: ClassTable) -> dict[int, OracleScore]:
    """Per-class PQ (percent) straight from the definitions, by pixel-set enumeration."""
    for m in (pred, gt):
        if m.height > ORACLE_MAX_SIDE or m.width > ORACLE_MAX_SIDE:
            raise ValueError(f"oracle limited to {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE} maps, got {m.shape}")
    things = set(classes.thing_ids)
    pred_segs, _ = _pixel_sets(pred, classes)
    gt_segs, gt_void = _pixel_sets(gt, classes)

    def is_crowd(label):
        return label[0] in things and label[1] == 0

    out = {}
    for c in classes.ids:
        P = {k: v for k, v in pred_segs.items() if k[0] == c}
        G = {k: v for k, v in gt_segs.items() if k[0] == c and not is_crowd(k)}
        crowd = set().union(*[v for k, v in gt_segs.items() if k[0] == c and is_crowd(k)])
        tp_ious = []
        matched_p, matched_g = set(), set()
        for pk, pset in P.items():
            p_eff = pset - gt_void
            for gk, gset in G.items():
                inter = len(p_eff & gset)
                union = len(p_eff) + len(gset) - inter
                if union and inter / union > 0.5:
                    tp_ious.append(inter / union)
                    matched_p.add(pk)
                    matched_g.add(gk)
        fp = 0
        for pk, pset in P.items():
            if pk in matched_p:
                continue
            if len(pset & gt_void) + len(pset & crowd) > len(pset) / 2:
                continue
            fp += 1
        fn = sum(1 for gk in G if gk not in matched_g)
        tp = len(tp_ious)
        if tp + fp + fn == 0:
            continue
        iou_sum = 0.0
        for v in tp_ious:
            iou_sum += v
        denom = tp + fp / 2 + fn / 2
        out[c] = OracleScore(
            pq=100 * iou_sum / denom,
            sq=100 * iou_sum / tp if tp else 0.0,
            rq=100 * tp / denom,
            tp=tp, fp=fp, fn=fn,
        )
    return out


def brute_force_pdcq(pred: tuple[PanopticMap, DepthMap], gt: tuple[PanopticMap, DepthMap], lam: float,
                     classes: ClassTable, min_depth: float = 0.5, max_depth: float = 80.0,
                     inclusive: bool = True) -> dict[int, OracleScore]:
    """brute_force_pq after voiding every predicted pixel whose abs-rel depth error exceeds ``lam``."""
    pred_pan, pred_depth = pred
    gt_pan, gt_depth = gt
    rows, cols = pred_pan.shape
    cl = pred_pan.class_ids.tolist()
    il = pred_pan.instance_ids.tolist()
    pd = pred_depth.depth.tolist()
    gd = gt_depth.depth.tolist()
    for r in range(rows):
        for c in range(cols):
            g = gd[r][c]
            if not (g > 0 and min_depth <= g <= max_depth):
                continue
            err = abs(pd[r][c] - g) / g
            keep = err <= lam if inclusive else err < lam
            if not keep:
                cl[r][c] = classes.void_class_id
                il[r][c] = 0
    filtered = PanopticMap(np.array(cl, dtype=np.uint8), np.array(il, dtype=np.uint16))
    return brute_force_pq(filtered, gt_pan, classes)


def oracle_mean(scores: dict[int, OracleScore]) -> Optional[float]:
    if not scores:
        return None
    vals = [s.pq for s in scores.values()]
    return sum(vals) / len(vals)

"""Domain types shared by every module, plus structural validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MAX_CLASS_ID = 255
MAX_INSTANCE_ID = 999

# Per-class kind codes used by the label kernels.
KIND_VOID = 0
KIND_STUFF = 1
KIND_THING = 2


@dataclass(frozen=True)
class ClassInfo:
    id: int
    name: str
    is_thing: bool


@dataclass(frozen=True)
class ClassTable:
    """Evaluated classes plus the reserved void class id."""

    classes: tuple[ClassInfo, ...]
    void_class_id: int = 255

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(sorted(self.classes, key=lambda c: c.id)))
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate class ids in {ids}")
        for cid in ids + [self.void_class_id]:
            if not 0 <= cid <= MAX_CLASS_ID:
                raise ValueError(f"class id {cid} outside [0, {MAX_CLASS_ID}]")
        if self.void_class_id in ids:
            raise ValueError(f"void class id {self.void_class_id} is listed as an evaluated class")

    @classmethod
    def from_dicts(cls, entries: Iterable[dict], void_class_id: int = 255) -> "ClassTable":
        return cls(
            tuple(ClassInfo(int(e["id"]), str(e.get("name", f"class_{e['id']}")), bool(e["is_thing"]))
                  for e in entries),
            int(void_class_id),
        )

    def to_dicts(self) -> list[dict]:
        return [{"id": c.id, "name": c.name, "is_thing": c.is_thing} for c in self.classes]

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes)

    @property
    def thing_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes if c.is_thing)

    @property
    def stuff_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes if not c.is_thing)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.ids

    def get(self, class_id: int) -> Optional[ClassInfo]:
        for c in self.classes:
            if c.id == class_id:
                return c
        return None

    def is_thing(self, class_id: int) -> bool:
        info = self.get(class_id)
        return info is not None and info.is_thing

    def kind_lut(self) -> np.ndarray:
        """uint8[256] lookup: class id -> KIND_VOID / KIND_STUFF / KIND_THING.

        Unknown ids map to KIND_VOID, so they never form segments.
        """
        lut = np.zeros(MAX_CLASS_ID + 1, dtype=np.uint8)
        for c in self.classes:
            lut[c.id] = KIND_THING if c.is_thing else KIND_STUFF
        return lut


def _readonly(a: np.ndarray) -> np.ndarray:
    if not a.flags.writeable and a.flags.c_contiguous:
        return a
    a = np.array(a, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Per-pixel (class id, instance id) labels as two row-major grids."""

    class_ids: np.ndarray
    instance_ids: np.ndarray

    def __post_init__(self):
        cls = np.asarray(self.class_ids)
        inst = np.asarray(self.instance_ids)
        if cls.ndim != 2 or cls.shape != inst.shape:
            raise ValueError(f"class/instance grids must be equal 2-D shapes, got {cls.shape} and {inst.shape}")
        if cls.size and (cls.min() < 0 or cls.max() > MAX_CLASS_ID):
            raise ValueError(f"class ids must lie in [0, {MAX_CLASS_ID}]")
        if inst.size and (inst.min() < 0 or inst.max() > np.iinfo(np.uint16).max):
            raise ValueError("instance ids must fit in 16 bits")
        object.__setattr__(self, "class_ids", _readonly(cls.astype(np.uint8, copy=False)))
        object.__setattr__(self, "instance_ids", _readonly(inst.astype(np.uint16, copy=False)))

    @classmethod
    def filled(cls, height: int, width: int, class_id: int, instance_id: int = 0) -> "PanopticMap":
        return cls(np.full((height, width), class_id, np.uint8), np.full((height, width), instance_id, np.uint16))

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.class_ids.shape

    def label_at(self, row: int, col: int) -> tuple[int, int]:
        return int(self.class_ids[row, col]), int(self.instance_ids[row, col])

    def __eq__(self, other):
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return (np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.instance_ids, other.instance_ids))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth in meters; 0 marks an invalid pixel."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth grid must be 2-D, got shape {d.shape}")
        object.__setattr__(self, "depth", _readonly(d))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return np.array_equal(self.depth, other.depth)

    __hash__ = None


@dataclass(frozen=True)
class PdcqConfig:
    lambdas: tuple[float, ...] = (0.1, 0.25, 0.5)
    deltas: tuple[int, ...] = (1, 3, 5)
    min_depth: float = 0.5
    max_depth: float = 80.0
    iou_threshold: float = 0.5
    overall_aggregation: str = "mean"
    # "pixel": depth outliers become void before matching.
    # "segment": a matched pair only counts as TP if the pred segment's mean error <= lambda.
    filter_mode: str = "pixel"
    inclusive: bool = True

    def __post_init__(self):
        lambdas = tuple(float(x) for x in self.lambdas)
        deltas = tuple(int(x) for x in self.deltas)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "deltas", deltas)
        if not lambdas:
            raise ValueError("at least one lambda threshold is required")
        if any(not (x > 0) or math.isnan(x) for x in lambdas):
            raise ValueError(f"lambda thresholds must be positive, got {lambdas}")
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError(f"lambda thresholds must be strictly increasing, got {lambdas}")
        if any(d < 0 for d in deltas) or any(b <= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError(f"deltas must be sorted, unique and nonnegative, got {deltas}")
        if not (0 <= self.min_depth < self.max_depth):
            raise ValueError(f"need 0 <= min_depth < max_depth, got {self.min_depth}, {self.max_depth}")
        if self.iou_threshold != 0.5:
            raise ValueError("the IoU matching threshold is fixed at 0.5")
        if self.overall_aggregation not in ("mean", "sum"):
            raise ValueError(f"overall_aggregation must be 'mean' or 'sum', got {self.overall_aggregation!r}")
        if self.filter_mode not in ("pixel", "segment"):
            raise ValueError(f"filter_mode must be 'pixel' or 'segment', got {self.filter_mode!r}")

    def to_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "deltas": list(self.deltas),
            "min_depth": self.min_depth,
            "max_depth": self.max_depth,
            "iou_threshold": self.iou_threshold,
            "overall_aggregation": self.overall_aggregation,
            "filter_mode": self.filter_mode,
            "inclusive": self.inclusive,
        }


@dataclass(frozen=True, eq=False)
class EvalFrame:
    sequence_id: str
    t: int
    delta: int
    pred_pan: PanopticMap
    pred_depth: DepthMap
    gt_pan: PanopticMap
    gt_depth: DepthMap

    def __post_init__(self):
        shapes = {self.pred_pan.shape, self.pred_depth.shape, self.gt_pan.shape, self.gt_depth.shape}
        if len(shapes) != 1:
            raise ValueError(f"frame {self.key}: maps have differing shapes {sorted(shapes)}")
        if self.delta < 0:
            raise ValueError(f"frame {self.key}: negative horizon")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.sequence_id, self.t, self.delta)


@dataclass(frozen=True)
class Segment:
    class_id: int
    instance_id: int
    pixel_count: int
    is_ignore: bool = False

    def __post_init__(self):
        if self.pixel_count <= 0:
            raise ValueError("segments must cover at least one pixel")

    @property
    def label(self) -> tuple[int, int]:
        return (self.class_id, self.instance_id)


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    pixel: Optional[tuple[int, int]] = None
    count: int = 1


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


def _first_pixel(mask: np.ndarray) -> tuple[int, int]:
    flat = int(np.flatnonzero(mask)[0])
    return divmod(flat, mask.shape[1])


def validate(pan: PanopticMap, depth: DepthMap, classes: ClassTable) -> ValidationReport:
    """Check every structural invariant of a panoptic/depth pair.

    One violation is reported per broken rule, naming the first offending pixel
    in raster order and the total number of offending pixels.
    """
    out: list[Violation] = []

    def add(rule: str, mask: np.ndarray, what: str):
        n = int(np.count_nonzero(mask))
        if n:
            px = _first_pixel(mask)
            out.append(Violation(rule, f"{what} at pixel (row={px[0]}, col={px[1]}); {n} pixel(s) affected", px, n))

    if pan.shape != depth.shape:
        out.append(Violation(
            "dimension_mismatch",
            f"panoptic map is {pan.height}x{pan.width} but depth map is {depth.height}x{depth.width}",
        ))

    cls = pan.class_ids
    inst = pan.instance_ids
    kind = classes.kind_lut()[cls]
    is_void = cls == classes.void_class_id
    add("unknown_class", (kind == KIND_VOID) & ~is_void, "class id not in the class table")
    add("stuff_instance", (kind == KIND_STUFF) & (inst != 0), "stuff pixel with nonzero instance id")
    add("void_instance", is_void & (inst != 0), "void pixel with nonzero instance id")
    add("instance_range", inst > MAX_INSTANCE_ID, f"instance id above {MAX_INSTANCE_ID}")

    d = depth.depth
    finite = np.isfinite(d)
    add("depth_nonfinite", ~finite, "non-finite depth")
    add("depth_negative", finite & (d < 0), "negative depth")
    return ValidationReport(tuple(out))


def check_same_shape(*grids: Sequence) -> None:
    shapes = {np.shape(g) for g in grids}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")

"""Readers and writers for label/depth PNGs and the dataset manifest.

On-disk conventions:

* panoptic: 16-bit grayscale PNG, value = class_id * 1000 + instance_id,
  65535 = void.
* depth: 16-bit grayscale PNG, meters = value / 256, 0 = invalid.
* predictions: ``{root}/{sequence_id}/{t}/{delta}_pan.png`` and
  ``{root}/{sequence_id}/{t}/{delta}_depth.png``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from panodepth.core import (
    MAX_INSTANCE_ID,
    ClassTable,
    DepthMap,
    EvalFrame,
    PanopticMap,
    PdcqConfig,
)

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

VOID_VALUE = 65535
DEPTH_SCALE = 256.0
MAX_DEPTH_VALUE = 65535 / DEPTH_SCALE
MANIFEST_VERSION = 1

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_COLOR_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


class IngestError(Exception):
    pass


class UnreadableImageError(IngestError):
    pass


class BitDepthError(IngestError):
    pass


class ChannelCountError(IngestError):
    pass


class EncodingError(IngestError):
    pass


class ManifestError(IngestError):
    pass


def _read_png_header(path: Path) -> tuple[int, int, int, int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(33)
    except OSError as exc:
        raise UnreadableImageError(f"{path}: {exc}") from exc
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise UnreadableImageError(f"{path}: not a PNG file")
    width, height, bit_depth, color_type = struct.unpack(">IIBB", head[16:26])
    return width, height, bit_depth, color_type


def read_png16(path: PathLike) -> np.ndarray:
    """Decode a 16-bit single-channel PNG into a uint16 array."""
    path = Path(path)
    width, height, bit_depth, color_type = _read_png_header(path)
    if color_type != 0:
        raise ChannelCountError(
            f"{path}: expected single-channel grayscale, got {_COLOR_CHANNELS.get(color_type, '?')} "
            f"channel(s) (PNG color type {color_type})")
    if bit_depth != 16:
        raise BitDepthError(f"{path}: expected 16-bit samples, got {bit_depth}-bit")
    try:
        with Image.open(path) as im:
            arr = np.array(im, dtype=np.uint16)
    except (OSError, ValueError) as exc:
        raise UnreadableImageError(f"{path}: {exc}") from exc
    if arr.shape != (height, width):
        raise UnreadableImageError(f"{path}: decoded shape {arr.shape} disagrees with header")
    return arr


def write_png16(arr: np.ndarray, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(arr, dtype=np.uint16)
    try:
        Image.fromarray(data).save(path, format="PNG")
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def decode_panoptic(raw: np.ndarray, void_class_id: int = 255) -> PanopticMap:
    raw = np.asarray(raw, dtype=np.uint16)
    void = raw == VOID_VALUE
    cls = (raw // 1000).astype(np.uint8)
    inst = (raw % 1000).astype(np.uint16)
    cls[void] = void_class_id
    inst[void] = 0
    return PanopticMap(cls, inst)


def encode_panoptic(pan: PanopticMap, void_class_id: int = 255) -> np.ndarray:
    cls = pan.class_ids.astype(np.int64)
    inst = pan.instance_ids.astype(np.int64)
    void = cls == void_class_id
    if np.any(void & (inst != 0)):
        raise EncodingError("void pixels must carry instance id 0")
    bad = ~void & (inst > MAX_INSTANCE_ID)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise EncodingError(f"instance id {inst[r, c]} at ({r}, {c}) does not fit the class*1000+instance encoding")
    value = cls * 1000 + inst
    bad = ~void & (value >= VOID_VALUE)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise EncodingError(f"label ({cls[r, c]}, {inst[r, c]}) at ({r}, {c}) collides with the void value")
    value[void] = VOID_VALUE
    return value.astype(np.uint16)


def read_panoptic(path: PathLike, void_class_id: int = 255) -> PanopticMap:
    return decode_panoptic(read_png16(path), void_class_id)


def write_panoptic(pan: PanopticMap, path: PathLike, void_class_id: int = 255) -> None:
    write_png16(encode_panoptic(pan, void_class_id), path)


def decode_depth(raw: np.ndarray) -> DepthMap:
    return DepthMap(np.asarray(raw, dtype=np.uint16).astype(np.float64) / DEPTH_SCALE)


def encode_depth(depth: DepthMap) -> np.ndarray:
    d = depth.depth
    if not np.all(np.isfinite(d)):
        raise EncodingError("depth map contains non-finite values")
    if np.any(d < 0):
        raise EncodingError("depth map contains negative values")
    if np.any(d > MAX_DEPTH_VALUE):
        raise EncodingError(f"depth above {MAX_DEPTH_VALUE} m cannot be encoded")
    raw = np.rint(d * DEPTH_SCALE)
    # would otherwise read back as invalid
    if np.any((d > 0) & (raw == 0)):
        raise EncodingError(f"positive depth below {0.5 / DEPTH_SCALE} m cannot be encoded")
    return raw.astype(np.uint16)


def read_depth(path: PathLike) -> DepthMap:
    return decode_depth(read_png16(path))


def write_depth(depth: DepthMap, path: PathLike) -> None:
    write_png16(encode_depth(depth), path)


# --- manifest ---------------------------------------------------------------


@dataclass(frozen=True)
class FrameRecord:
    index: int
    panoptic: Path
    depth: Path


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    frames: tuple[FrameRecord, ...]
    anchors: Optional[tuple[int, ...]] = None  # explicit last-observed frame indices

    def frame(self, index: int) -> Optional[FrameRecord]:
        for f in self.frames:
            if f.index == index:
                return f
        return None

    def anchor_frames(self, observed_window: int) -> list[int]:
        """Frame indices ``t`` preceded by at least ``observed_window`` frames."""
        eligible = [f.index for pos, f in enumerate(self.frames) if pos >= observed_window]
        if self.anchors is None:
            return eligible
        return [t for t in self.anchors if t in eligible]

    def window(self, t: int, observed_window: int) -> list[FrameRecord]:
        pos = [f.index for f in self.frames].index(t)
        return list(self.frames[max(0, pos - observed_window): pos + 1])


@dataclass(frozen=True)
class Manifest:
    dataset_name: str
    class_table: ClassTable
    sequences: tuple[SequenceRecord, ...]
    observed_window: int = 3
    deltas: tuple[int, ...] = (1, 3, 5)
    root: Path = field(default_factory=Path)

    def sequence(self, sequence_id: str) -> SequenceRecord:
        for s in self.sequences:
            if s.sequence_id == sequence_id:
                return s
        raise KeyError(sequence_id)

    def to_dict(self) -> dict:
        def rel(p: Path) -> str:
            try:
                return p.relative_to(self.root).as_posix()
            except ValueError:
                return str(p)

        seqs = []
        for s in self.sequences:
            entry = {
                "id": s.sequence_id,
                "frames": [{"index": f.index, "panoptic": rel(f.panoptic), "depth": rel(f.depth)}
                           for f in s.frames],
            }
            if s.anchors is not None:
                entry["anchors"] = list(s.anchors)
            seqs.append(entry)
        return {
            "version": MANIFEST_VERSION,
            "dataset_name": self.dataset_name,
            "classes": self.class_table.to_dicts(),
            "void_class_id": self.class_table.void_class_id,
            "eval": {"observed_window": self.observed_window, "deltas": list(self.deltas)},
            "sequences": seqs,
        }


def parse_manifest(doc: dict, root: PathLike = ".", check_paths: bool = True) -> Manifest:
    root = Path(root)
    try:
        classes = ClassTable.from_dicts(doc["classes"], doc.get("void_class_id", 255))
        ev = doc.get("eval", {})
        sequences = []
        for s in doc["sequences"]:
            frames = tuple(
                FrameRecord(int(f["index"]), root / f["panoptic"], root / f["depth"]) for f in s["frames"])
            idx = [f.index for f in frames]
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise ManifestError(f"sequence {s['id']}: frame indices not strictly increasing")
            anchors = tuple(int(a) for a in s["anchors"]) if "anchors" in s else None
            sequences.append(SequenceRecord(str(s["id"]), frames, anchors))
        manifest = Manifest(
            dataset_name=str(doc.get("dataset_name", "")),
            class_table=classes,
            sequences=tuple(sequences),
            observed_window=int(ev.get("observed_window", 3)),
            deltas=tuple(int(d) for d in ev.get("deltas", (1, 3, 5))),
            root=root,
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest: missing or invalid field {exc}") from exc
    except ValueError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    ids = [s.sequence_id for s in manifest.sequences]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate sequence ids")
    if manifest.observed_window < 0:
        raise ManifestError("observed_window must be nonnegative")
    if check_paths:
        missing = [str(p) for s in manifest.sequences for f in s.frames for p in (f.panoptic, f.depth)
                   if not p.is_file()]
        if missing:
            raise ManifestError(f"{len(missing)} referenced file(s) not found, first: {missing[0]}")
    return manifest


def load_manifest(path: PathLike, check_paths: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(doc, path.parent, check_paths)


def write_manifest(manifest: Manifest, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


# --- predictions ------------------------------------------------------------


@dataclass(frozen=True)
class PredictionLayout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def panoptic_path(self, sequence_id: str, t: int, delta: int) -> Path:
        return self.root / sequence_id / str(t) / f"{delta}_pan.png"

    def depth_path(self, sequence_id: str, t: int, delta: int) -> Path:
        return self.root / sequence_id / str(t) / f"{delta}_depth.png"

    def write(self, sequence_id: str, t: int, delta: int, pan: PanopticMap, depth: DepthMap,
              void_class_id: int = 255) -> None:
        write_panoptic(pan, self.panoptic_path(sequence_id, t, delta), void_class_id)
        write_depth(depth, self.depth_path(sequence_id, t, delta))


@dataclass(frozen=True)
class FrameRef:
    """Everything needed to load one evaluation frame lazily."""

    sequence_id: str
    t: int
    delta: int
    gt_panoptic: Path
    gt_depth: Path
    pred_panoptic: Path
    pred_depth: Path

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.sequence_id, self.t, self.delta)


@dataclass(frozen=True)
class MissingPrediction:
    sequence_id: str
    t: int
    delta: int
    missing: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"sequence_id": self.sequence_id, "t": self.t, "delta": self.delta,
                "missing": list(self.missing)}


def expected_targets(manifest: Manifest, deltas) -> list[tuple[SequenceRecord, int, int, FrameRecord]]:
    """Every (sequence, t, delta, target frame) the manifest supports, sorted."""
    out = []
    for seq in sorted(manifest.sequences, key=lambda s: s.sequence_id):
        for t in seq.anchor_frames(manifest.observed_window):
            for d in sorted(deltas):
                target = seq.frame(t + d)
                if target is not None:
                    out.append((seq, t, d, target))
    return out


def plan_eval_frames(manifest: Manifest, preds: PredictionLayout,
                     config: PdcqConfig) -> tuple[list[FrameRef], list[MissingPrediction]]:
    refs, missing = [], []
    for seq, t, d, target in expected_targets(manifest, config.deltas):
        pan = preds.panoptic_path(seq.sequence_id, t, d)
        dep = preds.depth_path(seq.sequence_id, t, d)
        absent = tuple(str(p) for p in (pan, dep) if not p.is_file())
        if absent:
            missing.append(MissingPrediction(seq.sequence_id, t, d, absent))
        else:
            refs.append(FrameRef(seq.sequence_id, t, d, target.panoptic, target.depth, pan, dep))
    return refs, missing


def load_eval_frame(ref: FrameRef, void_class_id: int = 255) -> EvalFrame:
    try:
        gt_pan = read_panoptic(ref.gt_panoptic, void_class_id)
        gt_depth = read_depth(ref.gt_depth)
    except IngestError as exc:
        raise IngestError(f"ground truth for {ref.key} unreadable: {exc}") from exc
    return EvalFrame(ref.sequence_id, ref.t, ref.delta,
                     read_panoptic(ref.pred_panoptic, void_class_id), read_depth(ref.pred_depth),
                     gt_pan, gt_depth)


@dataclass
class Resolution:
    frames: list
    missing: list

    def __iter__(self):
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


def resolve_eval_frames(manifest: Manifest, preds: PredictionLayout, config: PdcqConfig) -> Resolution:
    """Load every evaluable frame; missing prediction pairs are listed, not skipped silently."""
    refs, missing = plan_eval_frames(manifest, preds, config)
    for m in missing:
        log.warning("missing prediction for %s t=%d delta=%d", m.sequence_id, m.t, m.delta)
    void = manifest.class_table.void_class_id
    return Resolution([load_eval_frame(r, void) for r in refs], missing)

"""Non-learned forecasters: copy the last frame, or shift things rigidly."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from panodepth.core import KIND_STUFF, KIND_THING, ClassTable, DepthMap, PanopticMap

log = logging.getLogger(__name__)

VOTE_RADIUS = 2  # 5x5 neighbourhood


@dataclass(frozen=True)
class ObservedWindow:
    """Observed frames t-k..t, oldest first."""

    frames: tuple

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("observed window is empty")
        shape = self.frames[0][0].shape
        for pan, depth in self.frames:
            if pan.shape != shape or depth.shape != shape:
                raise ValueError(f"dimension mismatch inside window: {pan.shape}/{depth.shape} vs {shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def last(self) -> tuple[PanopticMap, DepthMap]:
        return self.frames[-1]


def last_seen_forecast(window: ObservedWindow, delta: int, classes: ClassTable = None):
    return window.last


def _centroids(pan: PanopticMap, kind: np.ndarray) -> dict:
    cls = pan.class_ids
    inst = pan.instance_ids
    is_inst = (kind[cls] == KIND_THING) & (inst > 0)
    code = cls.astype(np.int64) * 1000 + inst
    rows, cols = np.nonzero(is_inst)
    codes = code[rows, cols]
    out = {}
    if codes.size == 0:
        return out
    uniq, inv = np.unique(codes, return_inverse=True)
    n = np.bincount(inv)
    sy = np.bincount(inv, weights=rows)
    sx = np.bincount(inv, weights=cols)
    for u, k, y, x in zip(uniq.tolist(), n.tolist(), sy.tolist(), sx.tolist()):
        out[u] = (y / k, x / k)
    return out


def _box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the (2r+1)x(2r+1) window around every pixel, zero-padded."""
    p = np.pad(a, r, mode="constant")
    c = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    c[1:, 1:] = p.cumsum(0).cumsum(1)
    k = 2 * r + 1
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def const_velocity_forecast(window: ObservedWindow, delta: int, classes: ClassTable):
    """Shift every thing seen in both of the last two frames by round(delta * velocity)."""
    if len(window) < 2:
        raise ValueError("constant-velocity forecast needs at least two observed frames")
    (prev_pan, _), (pan, depth) = window.frames[-2], window.frames[-1]
    kind = classes.kind_lut()
    h, w = pan.shape
    cls_t = pan.class_ids
    inst_t = pan.instance_ids
    dep_t = depth.depth
    code_t = cls_t.astype(np.int64) * 1000 + inst_t

    now = _centroids(pan, kind)
    before = _centroids(prev_pan, kind)

    out_cls = cls_t.copy()
    out_inst = inst_t.copy()
    out_dep = dep_t.copy()
    zbuf = np.full((h, w), np.inf)

    movers = []
    for code, (y, x) in now.items():
        mask = code_t == code
        valid = dep_t[mask]
        valid = valid[valid > 0]
        z = float(valid.mean()) if valid.size else np.inf
        shift = (0, 0)
        if code in before:
            py, px = before[code]
            shift = (_round_half_up(delta * (y - py)), _round_half_up(delta * (x - px)))
        if shift == (0, 0):
            zbuf[mask] = z
        else:
            movers.append((code, mask, shift, z))

    vacated = np.zeros((h, w), dtype=bool)
    for _, mask, _, _ in movers:
        vacated |= mask

    out_cls[vacated] = classes.void_class_id
    out_inst[vacated] = 0
    out_dep[vacated] = 0.0

    painted = np.zeros((h, w), dtype=bool)
    for code, mask, (dy, dx), z in movers:
        rows, cols = np.nonzero(mask)
        nr, nc = rows + dy, cols + dx
        inside = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        rows, cols, nr, nc = rows[inside], cols[inside], nr[inside], nc[inside]
        win = z < zbuf[nr, nc]
        rows, cols, nr, nc = rows[win], cols[win], nr[win], nc[win]
        c, i = divmod(code, 1000)
        out_cls[nr, nc] = c
        out_inst[nr, nc] = i
        out_dep[nr, nc] = dep_t[rows, cols]
        zbuf[nr, nc] = z
        painted[nr, nc] = True

    holes = vacated & ~painted
    if holes.any():
        _fill_holes(holes, cls_t, dep_t, vacated | (kind[cls_t] != KIND_STUFF), classes, out_cls, out_inst, out_dep)
    return PanopticMap(out_cls, out_inst), DepthMap(out_dep)


def _fill_holes(holes, cls_t, dep_t, non_voter, classes, out_cls, out_inst, out_dep) -> None:
    """Majority vote of frame-t stuff in a 5x5 window; ties go to the smallest class id."""
    best_n = np.zeros(holes.shape, dtype=np.int64)
    best_c = np.full(holes.shape, classes.void_class_id, dtype=np.uint8)
    best_d = np.zeros(holes.shape)
    for c in sorted(classes.stuff_ids):
        voter = (cls_t == c) & ~non_voter
        if not voter.any():
            continue
        n = np.rint(_box_sum(voter.astype(np.float64), VOTE_RADIUS)).astype(np.int64)
        with_depth = voter & (dep_t > 0)
        nd = _box_sum(with_depth.astype(np.float64), VOTE_RADIUS)
        sd = _box_sum(np.where(with_depth, dep_t, 0.0), VOTE_RADIUS)
        better = holes & (n > best_n)
        best_n[better] = n[better]
        best_c[better] = c
        with np.errstate(invalid="ignore", divide="ignore"):
            best_d[better] = np.where(nd[better] > 0, sd[better] / nd[better], 0.0)
    out_cls[holes] = best_c[holes]
    out_inst[holes] = 0
    out_dep[holes] = best_d[holes]


FORECASTERS: dict[str, Callable] = {
    "last-seen": last_seen_forecast,
    "const-velocity": const_velocity_forecast,
}


def forecast(name: str, window: ObservedWindow, delta: int, classes: ClassTable):
    """Dispatch by name; const-velocity falls back to last-seen on one-frame windows."""
    if name not in FORECASTERS:
        raise KeyError(f"unknown baseline {name!r}; choose from {sorted(FORECASTERS)}")
    if name == "const-velocity" and len(window) < 2:
        log.info("const-velocity: window has %d frame(s), using last-seen", len(window))
        return last_seen_forecast(window, delta, classes)
    return FORECASTERS[name](window, delta, classes)

"""Pure numpy implementations of the per-pixel kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are tested against. Results are identical for integer
outputs; depth sums may differ in the last ulp (pairwise vs sequential
summation).
"""

import numpy as np

BACKEND = "python"

_CODE_LIMIT = 256 * 1000
_DENSE_LIMIT = 1 << 24


def depth_pass(pred, gt, lambdas, min_depth, max_depth, inclusive=True):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("dimension mismatch between predicted and ground-truth depth")
    lambdas = np.asarray(lambdas, dtype=np.float64)
    valid = (gt > 0) & (gt >= min_depth) & (gt <= max_depth)
    p = pred[valid]
    g = gt[valid]
    diff = p - g
    err = np.abs(diff) / g

    # level = number of thresholds the error fails, i.e. first passing index
    level = np.zeros(err.shape, dtype=np.uint8)
    for lam in lambdas:
        passes = err <= lam if inclusive else err < lam
        level += ~passes
    # A failing threshold after a passing one cannot happen for sorted lambdas,
    # except with NaN errors, which fail all of them.
    levels = np.zeros(gt.shape, dtype=np.uint8)
    levels[valid] = level

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    sums = (
        int(valid.sum()),
        float(err.sum()),
        float((diff * diff).sum()),
        int((ratio < 1.25).sum()),
        int((ratio < 1.25 ** 2).sum()),
        int((ratio < 1.25 ** 3).sum()),
    )
    return levels, sums


def label_segments(cls, inst, kind_lut):
    cls = np.asarray(cls, dtype=np.uint8)
    inst = np.asarray(inst, dtype=np.uint16)
    if cls.shape != inst.shape:
        raise ValueError("class and instance grids differ in shape")
    kind = np.asarray(kind_lut, dtype=np.uint8)[cls]
    thing = kind == 2
    if np.any(inst[thing] > 999):
        raise ValueError("instance id above 999 on a thing pixel")
    code = cls.astype(np.int64) * 1000
    code[thing] += inst[thing]
    code[kind == 0] = -1
    present = code >= 0
    table = np.bincount(code[present], minlength=_CODE_LIMIT)
    codes = np.flatnonzero(table).astype(np.int64)
    areas = table[codes].astype(np.int64)
    remap = np.full(_CODE_LIMIT, -1, dtype=np.int32)
    remap[codes] = np.arange(codes.shape[0], dtype=np.int32)
    index = np.full(cls.shape, -1, dtype=np.int32)
    index[present] = remap[code[present]]
    return index, codes, areas


def pair_counts(gt_index, pred_index, n_gt, n_pred, levels=None, n_levels=1):
    gt_index = np.asarray(gt_index, dtype=np.int64)
    pred_index = np.asarray(pred_index, dtype=np.int64)
    if gt_index.shape != pred_index.shape:
        raise ValueError("dimension mismatch between label grids")
    if levels is None:
        n_levels = 1
        lev = 0
    else:
        lev = np.asarray(levels, dtype=np.int64)
        if lev.shape != gt_index.shape:
            raise ValueError("dimension mismatch between label grid and level grid")
    stride_p = n_levels
    stride_g = (n_pred + 1) * n_levels
    key = ((gt_index + 1) * stride_g + (pred_index + 1) * stride_p + lev).ravel()
    size = (n_gt + 1) * stride_g
    if size <= _DENSE_LIMIT:
        counts = np.bincount(key, minlength=size)
        nz = np.flatnonzero(counts)
        cnt = counts[nz]
    else:
        nz, cnt = np.unique(key, return_counts=True)
    g, rest = np.divmod(nz, stride_g)
    p, lv = np.divmod(rest, stride_p)
    return ((g - 1).astype(np.int32), (p - 1).astype(np.int32), lv.astype(np.uint8), cnt.astype(np.int64))

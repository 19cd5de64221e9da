# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels. Semantics match panodepth._kernels_py exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t

cnp.import_array()

DEF CODE_LIMIT = 256000  # 256 classes x 1000 instances
DEF DENSE_LIMIT = 1 << 24

BACKEND = "cython"


def depth_pass(const double[:, ::1] pred, const double[:, ::1] gt, const double[::1] lambdas,
               double min_depth, double max_depth, bint inclusive=True):
    cdef Py_ssize_t h = gt.shape[0], w = gt.shape[1], i, j
    cdef Py_ssize_t n_lam = lambdas.shape[0]
    if pred.shape[0] != h or pred.shape[1] != w:
        raise ValueError("dimension mismatch between predicted and ground-truth depth")
    if n_lam > 254:
        raise ValueError("too many lambda thresholds")
    levels_arr = np.zeros((h, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] levels = levels_arr
    cdef double p, g, err, ratio, diff
    cdef double t1 = 1.25, t2 = 1.25 ** 2, t3 = 1.25 ** 3
    cdef int64_t n_valid = 0, c1 = 0, c2 = 0, c3 = 0
    cdef double abs_rel_sum = 0.0, sq_sum = 0.0
    cdef Py_ssize_t k
    with nogil:
        for i in range(h):
            for j in range(w):
                g = gt[i, j]
                if not (g > 0.0 and g >= min_depth and g <= max_depth):
                    continue
                p = pred[i, j]
                diff = p - g
                err = fabs(diff) / g
                k = 0
                if inclusive:
                    while k < n_lam and not (err <= lambdas[k]):
                        k += 1
                else:
                    while k < n_lam and not (err < lambdas[k]):
                        k += 1
                levels[i, j] = <uint8_t>k
                n_valid += 1
                abs_rel_sum += err
                sq_sum += diff * diff
                ratio = p / g
                if g / p > ratio:
                    ratio = g / p
                if ratio < t1:
                    c1 += 1
                if ratio < t2:
                    c2 += 1
                if ratio < t3:
                    c3 += 1
    return levels_arr, (int(n_valid), abs_rel_sum, sq_sum, int(c1), int(c2), int(c3))


def label_segments(const uint8_t[:, ::1] cls, const uint16_t[:, ::1] inst, const uint8_t[::1] kind_lut):
    cdef Py_ssize_t h = cls.shape[0], w = cls.shape[1], i, j
    if inst.shape[0] != h or inst.shape[1] != w:
        raise ValueError("class and instance grids differ in shape")
    if kind_lut.shape[0] != 256:
        raise ValueError("kind lookup table must have 256 entries")
    table_arr = np.zeros(CODE_LIMIT, dtype=np.int64)
    cdef int64_t[::1] table = table_arr
    index_arr = np.empty((h, w), dtype=np.int32)
    cdef int32_t[:, ::1] index = index_arr
    cdef int32_t code
    cdef uint8_t kind, c
    cdef uint16_t n
    cdef bint bad = False
    with nogil:
        for i in range(h):
            for j in range(w):
                c = cls[i, j]
                kind = kind_lut[c]
                if kind == 0:
                    index[i, j] = -1
                    continue
                if kind == 1:
                    code = c * 1000
                else:
                    n = inst[i, j]
                    if n > 999:
                        bad = True
                        n = 999
                    code = c * 1000 + n
                index[i, j] = code
                table[code] += 1
    if bad:
        raise ValueError("instance id above 999 on a thing pixel")
    codes_arr = np.flatnonzero(table_arr).astype(np.int64)
    areas_arr = table_arr[codes_arr]
    remap_arr = np.full(CODE_LIMIT, -1, dtype=np.int32)
    remap_arr[codes_arr] = np.arange(codes_arr.shape[0], dtype=np.int32)
    cdef int32_t[::1] remap = remap_arr
    with nogil:
        for i in range(h):
            for j in range(w):
                code = index[i, j]
                if code >= 0:
                    index[i, j] = remap[code]
    return index_arr, codes_arr, areas_arr


def pair_counts(const int32_t[:, ::1] gt_index, const int32_t[:, ::1] pred_index,
                Py_ssize_t n_gt, Py_ssize_t n_pred, levels=None, Py_ssize_t n_levels=1):
    cdef Py_ssize_t h = gt_index.shape[0], w = gt_index.shape[1], i, j
    if pred_index.shape[0] != h or pred_index.shape[1] != w:
        raise ValueError("dimension mismatch between label grids")
    cdef const uint8_t[:, ::1] lev
    cdef bint has_levels = levels is not None
    if has_levels:
        lev = levels
        if lev.shape[0] != h or lev.shape[1] != w:
            raise ValueError("dimension mismatch between label grid and level grid")
    else:
        n_levels = 1
    cdef Py_ssize_t stride_p = n_levels
    cdef Py_ssize_t stride_g = (n_pred + 1) * n_levels
    cdef Py_ssize_t size = (n_gt + 1) * stride_g
    if size > DENSE_LIMIT:
        from panodepth import _kernels_py
        return _kernels_py.pair_counts(np.asarray(gt_index), np.asarray(pred_index), n_gt, n_pred,
                                       levels, n_levels)
    counts_arr = np.zeros(size, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef Py_ssize_t key
    with nogil:
        for i in range(h):
            for j in range(w):
                key = (gt_index[i, j] + 1) * stride_g + (pred_index[i, j] + 1) * stride_p
                if has_levels:
                    key += lev[i, j]
                counts[key] += 1
    nz = np.flatnonzero(counts_arr)
    g, rest = np.divmod(nz, stride_g)
    p, l = np.divmod(rest, stride_p)
    return ((g - 1).astype(np.int32), (p - 1).astype(np.int32), l.astype(np.uint8), counts_arr[nz])

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: exhaustive block-matching SSD search and bilinear warp.

Must stay result-identical to kernels._fallback (same tie-breaking, same
double-precision arithmetic order for the warp).
"""
import numpy as np

cimport numpy as cnp


def block_search(const unsigned char[:, :, ::1] cur,
                 const unsigned char[:, :, ::1] prev,
                 int block, int radius):
    cdef Py_ssize_t h = cur.shape[0], w = cur.shape[1], nch = cur.shape[2]
    cdef Py_ssize_t m = h // block, n = w // block
    vec_arr = np.zeros((m, n, 2), dtype=np.int16)
    cost_arr = np.zeros((m, n), dtype=np.int64)
    cdef short[:, :, ::1] vec = vec_arr
    cdef long long[:, ::1] costs = cost_arr
    cdef Py_ssize_t by, bx, y, x, c, y0, x0
    cdef int dy, dx, l1, best_l1
    cdef long long best, cost, diff
    with nogil:
        for by in range(m):
            y0 = by * block
            for bx in range(n):
                x0 = bx * block
                best = -1
                best_l1 = 0
                for dy in range(-radius, radius + 1):
                    if y0 + dy < 0 or y0 + dy + block > h:
                        continue
                    for dx in range(-radius, radius + 1):
                        if x0 + dx < 0 or x0 + dx + block > w:
                            continue
                        l1 = (dx if dx >= 0 else -dx) + (dy if dy >= 0 else -dy)
                        cost = 0
                        for y in range(block):
                            for x in range(block):
                                for c in range(nch):
                                    diff = (<long long> cur[y0 + y, x0 + x, c]
                                            - <long long> prev[y0 + dy + y, x0 + dx + x, c])
                                    cost += diff * diff
                            if best >= 0 and cost > best:
                                break  # partial sum already lost
                        if best < 0 or cost < best or (cost == best and l1 < best_l1):
                            best = cost
                            best_l1 = l1
                            vec[by, bx, 0] = <short> dx
                            vec[by, bx, 1] = <short> dy
                costs[by, bx] = best
    return vec_arr, cost_arr


def bilinear_warp(const float[:, :, ::1] f,
                  const float[:, ::1] dy,
                  const float[:, ::1] dx):
    cdef Py_ssize_t nch = f.shape[0], h = f.shape[1], w = f.shape[2]
    out_arr = np.empty((nch, h, w), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, y, x, y0, x0, y1, x1
    cdef double sy, sx, wy, wx, w00, w01, w10, w11
    with nogil:
        for y in range(h):
            for x in range(w):
                sy = y + <double> dy[y, x]
                sx = x + <double> dx[y, x]
                if sy < 0:
                    sy = 0
                elif sy > h - 1:
                    sy = h - 1
                if sx < 0:
                    sx = 0
                elif sx > w - 1:
                    sx = w - 1
                y0 = <Py_ssize_t> sy
                x0 = <Py_ssize_t> sx
                wy = sy - y0
                wx = sx - x0
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                w00 = (1.0 - wy) * (1.0 - wx)
                w01 = (1.0 - wy) * wx
                w10 = wy * (1.0 - wx)
                w11 = wy * wx
                for c in range(nch):
                    out[c, y, x] = <float> (f[c, y0, x0] * w00 + f[c, y0, x1] * w01
                                            + f[c, y1, x0] * w10 + f[c, y1, x1] * w11)
    return out_arr

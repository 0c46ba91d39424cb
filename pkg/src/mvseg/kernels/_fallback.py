"""NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via MVSEG_PURE=1).
Both backends must agree exactly: integer SSD with identical tie-breaking for
the block search, and identical operation order (double precision, cast to
float32) for the bilinear warp.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def block_search(cur: np.ndarray, prev: np.ndarray, block: int, radius: int):
    """Exhaustive block matching.

    cur, prev: uint8 (H, W, C). Returns (vectors int16 (M, N, 2) as (dx, dy),
    costs int64 (M, N)) where cost is the SSD of the winning offset. Offsets
    whose source block leaves the previous frame are excluded. Ties are broken
    by smaller |dx|+|dy|, then by scan order (dy, then dx, ascending).
    """
    h, w, _ = cur.shape
    m, n = h // block, w // block
    ci = cur.astype(np.int32)
    pi = prev.astype(np.int32)

    best_cost = np.full((m, n), np.iinfo(np.int64).max, dtype=np.int64)
    best_l1 = np.zeros((m, n), dtype=np.int32)
    vectors = np.zeros((m, n, 2), dtype=np.int16)

    for dy in range(-radius, radius + 1):
        # block rows whose shifted source block stays inside [0, h)
        by0 = max(0, (-dy + block - 1) // block)
        by1 = (h - block - dy) // block + 1
        if by0 >= by1:
            continue
        for dx in range(-radius, radius + 1):
            bx0 = max(0, (-dx + block - 1) // block)
            bx1 = (w - block - dx) // block + 1
            if bx0 >= bx1:
                continue
            py0, py1 = by0 * block, by1 * block
            px0, px1 = bx0 * block, bx1 * block
            d = ci[py0:py1, px0:px1] - pi[py0 + dy : py1 + dy, px0 + dx : px1 + dx]
            d *= d
            sums = d.reshape(by1 - by0, block, bx1 - bx0, block, -1).sum(
                axis=(1, 3, 4), dtype=np.int64
            )
            l1 = abs(dx) + abs(dy)
            sub_cost = best_cost[by0:by1, bx0:bx1]
            sub_l1 = best_l1[by0:by1, bx0:bx1]
            better = (sums < sub_cost) | ((sums == sub_cost) & (l1 < sub_l1))
            if not better.any():
                continue
            sub_cost[better] = sums[better]
            sub_l1[better] = l1
            vectors[by0:by1, bx0:bx1, 0][better] = dx
            vectors[by0:by1, bx0:bx1, 1][better] = dy
    return vectors, best_cost


def bilinear_warp(f: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Pull-sample f (float32, (C, H, W)) at (y + dy, x + dx), clamp-to-edge."""
    c, h, w = f.shape
    sy = np.arange(h, dtype=np.float64)[:, None] + dy.astype(np.float64)
    sx = np.arange(w, dtype=np.float64)[None, :] + dx.astype(np.float64)
    np.clip(sy, 0.0, h - 1.0, out=sy)
    np.clip(sx, 0.0, w - 1.0, out=sx)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    wy = sy - y0
    wx = sx - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    f64 = f.astype(np.float64)
    out = f64[:, y0, x0] * w00
    out += f64[:, y0, x1] * w01
    out += f64[:, y1, x0] * w10
    out += f64[:, y1, x1] * w11
    return out.astype(np.float32)

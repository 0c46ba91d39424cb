"""Block motion estimation, residuals, and exact frame reconstruction.

A motion vector map for a 16M x 16N frame is an M x N grid of integer pixel
offsets (dx, dy): block b at top-left (x, y) in the current frame best matches
the previous-frame block at (x + dx, y + dy). Matching minimizes the integer
sum of squared differences (monotone equivalent of MSE) over an exhaustive
window of +/- radius, on the luma plane by default. Together with the residual
(current minus motion-compensated previous) the map reconstructs the current
frame bit-exactly, for any valid map.

Sidecar format (one file per frame pair, also the ingestion point for
externally extracted codec vectors): magic "MVEC", u32 LE grid width N, grid
height M, block size, then M*N pairs of i16 LE (dx, dy) in row-major order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, ValidationError
from .frame_io import Frame


@dataclass(frozen=True)
class SearchParams:
    block_size: int = 16
    radius: int = 16
    metric: str = "mse"
    use_luma: bool = True  # match on the luma plane (codec practice)

    def __post_init__(self):
        if self.block_size <= 0:
            raise ValidationError("block size must be positive")
        if self.radius < 0:
            raise ValidationError("search radius must be >= 0")
        if self.metric != "mse":
            raise ValidationError(f"unsupported metric {self.metric!r} (only 'mse')")


@dataclass(frozen=True)
class MotionVectorMap:
    """vectors: int16 (M, N, 2) holding (dx, dy); costs: optional SSD per block."""

    vectors: np.ndarray
    block_size: int
    costs: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 3 or v.shape[2] != 2 or v.dtype != np.int16:
            raise ValidationError(f"vectors must be int16 (M, N, 2), got {v.shape} {v.dtype}")

    @property
    def grid_height(self) -> int:
        return self.vectors.shape[0]

    @property
    def grid_width(self) -> int:
        return self.vectors.shape[1]

    def negated(self) -> "MotionVectorMap":
        """Cheap reverse-direction approximation; costs do not carry over."""
        return MotionVectorMap(vectors=(-self.vectors.astype(np.int16)), block_size=self.block_size)


@dataclass(frozen=True)
class ResidualMap:
    """Signed per-pixel differences, int16 (H, W, C), values in [-255, 255]."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.dtype != np.int16 or self.values.ndim != 3:
            raise ValidationError("residual must be int16 (H, W, C)")


def _check_pair(prev: Frame, cur: Frame, block: int) -> None:
    if (prev.width, prev.height, prev.channels) != (cur.width, cur.height, cur.channels):
        raise ValidationError("frame pair must share dimensions and channel count")
    if cur.width % block or cur.height % block:
        raise ValidationError(f"dimensions {cur.width}x{cur.height} not divisible by block {block}")


def _match_planes(prev: Frame, cur: Frame, params: SearchParams):
    if params.use_luma:
        return prev.luma()[:, :, None], cur.luma()[:, :, None]
    return prev.pixels, cur.pixels


def estimate_motion(prev: Frame, cur: Frame, params: SearchParams = SearchParams()) -> MotionVectorMap:
    """Exhaustive-window block matching of cur against prev.

    Every returned offset attains the window minimum of the match cost; ties
    go to the smallest |dx|+|dy| and then to scan order (dy, dx ascending),
    which makes identical frames map to all-zero vectors.
    """
    _check_pair(prev, cur, params.block_size)
    p, c = _match_planes(prev, cur, params)
    vectors, costs = kernels.block_search(
        np.ascontiguousarray(c), np.ascontiguousarray(p), params.block_size, params.radius
    )
    return MotionVectorMap(vectors=vectors, block_size=params.block_size, costs=costs)


def _check_mv(frame: Frame, mv: MotionVectorMap) -> None:
    b = mv.block_size
    if frame.height != mv.grid_height * b or frame.width != mv.grid_width * b:
        raise ValidationError(
            f"motion map grid {mv.grid_height}x{mv.grid_width} (block {b}) does not cover "
            f"frame {frame.height}x{frame.width}"
        )


def compensate(prev: Frame, mv: MotionVectorMap) -> np.ndarray:
    """Motion-compensated previous frame: out(p) = prev(p + mv(block(p)))."""
    _check_mv(prev, mv)
    b = mv.block_size
    h, w = prev.height, prev.width
    dx = np.repeat(np.repeat(mv.vectors[:, :, 0].astype(np.intp), b, axis=0), b, axis=1)
    dy = np.repeat(np.repeat(mv.vectors[:, :, 1].astype(np.intp), b, axis=0), b, axis=1)
    src_y = np.arange(h, dtype=np.intp)[:, None] + dy
    src_x = np.arange(w, dtype=np.intp)[None, :] + dx
    if src_y.min() < 0 or src_y.max() >= h or src_x.min() < 0 or src_x.max() >= w:
        raise ValidationError("motion vectors reference pixels outside the previous frame")
    return prev.pixels[src_y, src_x]


def compute_residual(prev: Frame, cur: Frame, mv: MotionVectorMap) -> ResidualMap:
    """residual(p) = cur(p) - prev(p + mv(block(p))), per channel."""
    _check_pair(prev, cur, mv.block_size)
    mc = compensate(prev, mv).astype(np.int16)
    return ResidualMap(values=cur.pixels.astype(np.int16) - mc)


def reconstruct(prev: Frame, mv: MotionVectorMap, residual: ResidualMap) -> Frame:
    """Decoder step: motion-compensated previous frame plus residual.

    Exact inverse of compute_residual for any valid map, by construction.
    """
    _check_mv(prev, mv)
    mc = compensate(prev, mv).astype(np.int16)
    if residual.values.shape != mc.shape:
        raise ValidationError("residual dimensions do not match the frame")
    out = np.clip(mc + residual.values, 0, 255).astype(np.uint8)
    return Frame(out)


# ---------------------------------------------------------------------------
# MVEC sidecar files
# ---------------------------------------------------------------------------

_MVEC_MAGIC = b"MVEC"


def write_mvec(mv: MotionVectorMap, path: str | Path) -> None:
    header = _MVEC_MAGIC + np.array(
        [mv.grid_width, mv.grid_height, mv.block_size], dtype="<u4"
    ).tobytes()
    Path(path).write_bytes(header + mv.vectors.astype("<i2").tobytes())


def read_mvec(path: str | Path) -> MotionVectorMap:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MVEC_MAGIC:
        raise FormatError(f"{path}: not an MVEC file (bad magic)")
    n, m, block = (int(v) for v in np.frombuffer(data[4:16], dtype="<u4"))
    if block <= 0 or m <= 0 or n <= 0:
        raise FormatError(f"{path}: invalid MVEC header")
    expected = 16 + m * n * 4
    if len(data) < expected:
        raise FormatError(f"{path}: truncated MVEC payload ({len(data)} < {expected} bytes)")
    vectors = np.frombuffer(data[16:expected], dtype="<i2").reshape(m, n, 2)
    return MotionVectorMap(vectors=vectors.astype(np.int16), block_size=block)

"""Feature-grid warping: motion maps -> displacement fields -> warped features.

The sampling convention is pull/backward: output cell (y, x) bilinearly
samples the source feature map at (y + dy, x + dx), with out-of-range
coordinates clamped to the grid border. A motion map therefore converts to a
field by plain division by the stride: the vectors already point into the map
being sampled (the previous keyframe's features for `forward` fields, the
next keyframe's for `backward` ones).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .block_motion import MotionVectorMap
from .errors import ValidationError
from .feature_sim import FeatureMap


@dataclass(frozen=True)
class DisplacementField:
    """Per-cell real displacements in feature-grid units, float32 (gh, gw)."""

    dx: np.ndarray
    dy: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValidationError("dx and dy must be 2-D arrays of equal shape")
        if self.dx.dtype != np.float32 or self.dy.dtype != np.float32:
            raise ValidationError("displacement fields must be float32")
        if self.direction not in ("forward", "backward"):
            raise ValidationError(f"unknown field direction {self.direction!r}")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise ValidationError("displacement fields must be finite")

    @property
    def grid_height(self) -> int:
        return self.dx.shape[0]

    @property
    def grid_width(self) -> int:
        return self.dx.shape[1]


def mv_to_field(mv: MotionVectorMap, stride: int, direction: str = "forward") -> DisplacementField:
    """Convert pixel-unit block vectors to grid-unit cell displacements.

    When the block size equals the stride the mapping is 1:1 cell-to-block;
    otherwise each cell reads the block containing its pixel center.
    """
    if stride <= 0:
        raise ValidationError("stride must be positive")
    b = mv.block_size
    if b != stride and (b % stride != 0 and stride % b != 0):
        raise ValidationError(
            f"block size {b} incompatible with stride {stride} (need equal or integer ratio)"
        )
    gh = mv.grid_height * b // stride
    gw = mv.grid_width * b // stride
    if gh * stride != mv.grid_height * b or gw * stride != mv.grid_width * b:
        raise ValidationError("motion grid does not tile the feature grid")
    if b == stride:
        block_y = np.arange(gh)
        block_x = np.arange(gw)
    else:
        block_y = np.minimum(((np.arange(gh) + 0.5) * stride // b).astype(np.intp), mv.grid_height - 1)
        block_x = np.minimum(((np.arange(gw) + 0.5) * stride // b).astype(np.intp), mv.grid_width - 1)
    vec = mv.vectors[np.ix_(block_y, block_x)]
    return DisplacementField(
        dx=(vec[:, :, 0].astype(np.float32) / stride),
        dy=(vec[:, :, 1].astype(np.float32) / stride),
        direction=direction,
    )


def warp_features(f: FeatureMap, d: DisplacementField) -> FeatureMap:
    """Bilinear pull-warp of every channel; linear in f for fixed d."""
    if (d.grid_height, d.grid_width) != (f.grid_height, f.grid_width):
        raise ValidationError(
            f"field grid {d.grid_height}x{d.grid_width} does not match "
            f"feature grid {f.grid_height}x{f.grid_width}"
        )
    out = kernels.bilinear_warp(
        np.ascontiguousarray(f.values), np.ascontiguousarray(d.dy), np.ascontiguousarray(d.dx)
    )
    return FeatureMap(values=out, stride=f.stride)


def propagate(f: FeatureMap, steps: int, fields: list[DisplacementField]) -> list[FeatureMap]:
    """Chain of one-step warps: returns [f, warp(f, fields[0]), ...], length steps+1."""
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    if len(fields) < steps:
        raise ValidationError(f"need {steps} displacement fields, got {len(fields)}")
    out = [f]
    for i in range(steps):
        out.append(warp_features(out[-1], fields[i]))
    return out

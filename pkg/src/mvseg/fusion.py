"""Fusion of forward- and backward-warped feature maps.

Inputs are first scaled by relevance weights alpha = (n-p)/n and 1-alpha =
p/n, penalizing the map warped farther from its keyframe. The operator then
combines the scaled maps: elementwise max, sum (the weights already form a
convex combination, so no further halving), or a learned per-position linear
map over the channel-stacked pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .feature_sim import FeatureMap, TaskHead

OPERATORS = ("max", "avg", "conv")


@dataclass(frozen=True)
class FusionConfig:
    operator: str = "avg"
    conv_w: np.ndarray | None = None  # (A, 2A)
    conv_b: np.ndarray | None = None  # (A,)

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValidationError(f"unknown fusion operator {self.operator!r}")
        if self.conv_w is not None:
            a2 = self.conv_w.shape
            if len(a2) != 2 or a2[1] != 2 * a2[0]:
                raise ValidationError(f"conv fusion weights must be (A, 2A), got {a2}")
            if self.conv_b is not None and self.conv_b.shape != (a2[0],):
                raise ValidationError("conv fusion bias shape mismatch")


def relevance_weights(n: int, p: int) -> tuple[float, float]:
    """((n-p)/n, p/n) for an intermediate frame at offset p of interval n."""
    if n < 2 or p <= 0 or p >= n:
        raise ValidationError(f"offset must satisfy 0 < p < n, got p={p}, n={n}")
    return (n - p) / n, p / n


def fuse(ff: FeatureMap, fb: FeatureMap, alpha: float, cfg: FusionConfig) -> FeatureMap:
    """Combine forward- and backward-warped features at weight alpha."""
    if ff.values.shape != fb.values.shape or ff.stride != fb.stride:
        raise ValidationError("fusion inputs must share shape and stride")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    a = np.float32(alpha) * ff.values
    b = np.float32(1.0 - alpha) * fb.values
    if cfg.operator == "max":
        out = np.maximum(a, b)
    elif cfg.operator == "avg":
        out = a + b
    else:
        if cfg.conv_w is None:
            raise ValidationError("conv fusion selected but no weights configured")
        nch = ff.channels
        stacked = np.concatenate([a, b], axis=0).reshape(2 * nch, -1)
        w = cfg.conv_w.astype(np.float32)
        bias = (cfg.conv_b if cfg.conv_b is not None else np.zeros(nch)).astype(np.float32)
        out = (w @ stacked + bias[:, None]).reshape(nch, ff.grid_height, ff.grid_width)
    return FeatureMap(values=out.astype(np.float32), stride=ff.stride)


def fit_conv_fusion(
    samples: list[tuple[FeatureMap, FeatureMap, float, FeatureMap]], lam: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Ridge fit of the (A, 2A) fusion map from weighted input stacks to
    target features; returns (weights, bias)."""
    if not samples:
        raise ValidationError("need at least one fusion training sample")
    if lam < 0:
        raise ValidationError("ridge coefficient must be >= 0")
    nch = samples[0][0].channels
    xs, ys = [], []
    for ff, fb, alpha, target in samples:
        if ff.channels != nch or fb.channels != nch or target.channels != nch:
            raise ValidationError("fusion samples must share channel count")
        a = float(alpha) * ff.values.astype(np.float64)
        b = (1.0 - float(alpha)) * fb.values.astype(np.float64)
        xs.append(np.concatenate([a, b], axis=0).reshape(2 * nch, -1))
        ys.append(target.values.astype(np.float64).reshape(nch, -1))
    x = np.concatenate(xs, axis=1)
    y = np.concatenate(ys, axis=1)
    xa = np.vstack([x, np.ones((1, x.shape[1]))])
    gram = xa @ xa.T + lam * np.eye(2 * nch + 1)
    w = np.linalg.solve(gram, xa @ y.T)  # (2A+1, A)
    return (
        np.ascontiguousarray(w[: 2 * nch].T.astype(np.float32)),
        w[2 * nch].astype(np.float32),
    )


def compose_fused_head(head: TaskHead, cfg: FusionConfig) -> TaskHead:
    """Fold the conv fusion map into the head's projection layer.

    The merged head consumes the 2A-channel stack of weighted inputs
    directly, so conv fusion adds no per-position work over the plain head.
    """
    if cfg.operator != "conv" or cfg.conv_w is None:
        raise ValidationError("merged head requires a configured conv fusion operator")
    w = cfg.conv_w.astype(np.float32)
    bias = (cfg.conv_b if cfg.conv_b is not None else np.zeros(w.shape[0])).astype(np.float32)
    return TaskHead(
        proj_w=head.proj_w @ w,
        proj_b=head.proj_w @ bias + head.proj_b,
        score_w=head.score_w,
        score_b=head.score_b,
        stride=head.stride,
    )

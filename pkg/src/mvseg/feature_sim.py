"""Desk-scale feature and task networks.

The feature extractor stands in for an expensive backbone: it maps a frame to
a float32 tensor of shape (channels, H/stride, W/stride). Two extractors are
provided:

  * ``oracle``: one channel per class, holding the fraction of the class's
    pixels inside each stride x stride cell of the ground-truth label map,
    plus optional seeded Gaussian noise. Requires labels; exists so that any
    accuracy loss downstream is attributable to warping and fusion alone.
  * ``handcraft``: label-free per-cell luma histogram plus multi-scale
    oriented gradient-energy statistics.

The task head mirrors the cheap per-frame stage: 1x1 projection, ReLU,
1x1 scoring, bilinear upsampling to full resolution, softmax, argmax.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .frame_io import Frame, LabelMap


@dataclass(frozen=True)
class FeatureMap:
    """values: float32 (channels, grid_h, grid_w); stride in pixels."""

    values: np.ndarray
    stride: int = 16

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.dtype != np.float32:
            raise ValidationError(f"feature values must be float32 (A, gh, gw), got {v.shape} {v.dtype}")
        if self.stride <= 0:
            raise ValidationError("stride must be positive")
        if not np.isfinite(v).all():
            raise ValidationError("feature values must be finite")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_height(self) -> int:
        return self.values.shape[1]

    @property
    def grid_width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class OracleExtractor:
    num_classes: int
    sigma: float = 0.0
    seed: int = 0
    stride: int = 16

    @property
    def channels(self) -> int:
        return self.num_classes


@dataclass(frozen=True)
class HandcraftExtractor:
    channels: int = 16
    stride: int = 16
    scales: tuple[int, ...] = (1, 2)  # box-smoothing radii for gradient energy
    orientations: int = 2  # 2: axis-aligned, 4: adds diagonals

    def __post_init__(self):
        if self.orientations not in (2, 4):
            raise ValidationError("orientations must be 2 or 4")
        if self.channels - len(self.scales) * self.orientations < 1:
            raise ValidationError("channel count leaves no room for histogram bins")


Extractor = OracleExtractor | HandcraftExtractor


def _cell_mean(a: np.ndarray, s: int) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // s, s, w // s, s).mean(axis=(1, 3))


def _box_mean(a: np.ndarray, r: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window, shrunk at the borders (integral image)."""
    if r <= 0:
        return a
    h, w = a.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = a.cumsum(axis=0, dtype=np.float64).cumsum(axis=1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    total = ii[y1][:, x1] - ii[y0][:, x1] - ii[y1][:, x0] + ii[y0][:, x0]
    area = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return (total / area).astype(np.float32)


def _check_frame_stride(frame: Frame, stride: int) -> None:
    if frame.width % stride or frame.height % stride:
        raise ValidationError(
            f"frame {frame.width}x{frame.height} not divisible by stride {stride}"
        )


def _oracle_features(frame: Frame, cfg: OracleExtractor, label: LabelMap) -> np.ndarray:
    s, c = cfg.stride, cfg.num_classes
    gh, gw = frame.height // s, frame.width // s
    lab = label.labels
    if lab.max() >= c:
        raise ValidationError(f"label id {lab.max()} outside [0, {c})")
    cell = (np.arange(gh * gw).reshape(gh, gw).repeat(s, 0).repeat(s, 1)).ravel()
    idx = cell * c + lab.ravel()
    counts = np.bincount(idx, minlength=gh * gw * c).reshape(gh, gw, c)
    feats = (counts / float(s * s)).transpose(2, 0, 1).astype(np.float32)
    if cfg.sigma > 0:
        # noise stream is a pure function of (config seed, frame content), so
        # identical frames get identical features while distinct keyframes
        # carry independent noise
        rng = np.random.default_rng((cfg.seed, zlib.crc32(frame.pixels.tobytes())))
        feats = feats + rng.normal(0.0, cfg.sigma, size=feats.shape).astype(np.float32)
    return feats


def _handcraft_features(frame: Frame, cfg: HandcraftExtractor) -> np.ndarray:
    s = cfg.stride
    gh, gw = frame.height // s, frame.width // s
    luma = frame.luma()
    lum = luma.astype(np.float32) / 255.0

    n_grad = len(cfg.scales) * cfg.orientations
    n_hist = cfg.channels - n_grad
    channels = np.empty((cfg.channels, gh, gw), dtype=np.float32)

    # normalized per-cell luma histogram
    bins = (luma.astype(np.int64) * n_hist) >> 8
    cell = np.arange(gh * gw).reshape(gh, gw).repeat(s, 0).repeat(s, 1).ravel()
    counts = np.bincount(cell * n_hist + bins.ravel(), minlength=gh * gw * n_hist)
    channels[:n_hist] = (
        counts.reshape(gh, gw, n_hist).transpose(2, 0, 1) / float(s * s)
    ).astype(np.float32)

    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    gx[:, :-1] = lum[:, 1:] - lum[:, :-1]
    gy[:-1, :] = lum[1:, :] - lum[:-1, :]
    planes = [np.abs(gx), np.abs(gy)]
    if cfg.orientations == 4:
        planes += [np.abs(gx + gy) * 0.5, np.abs(gx - gy) * 0.5]
    k = n_hist
    for r in cfg.scales:
        for plane in planes:
            channels[k] = _cell_mean(_box_mean(plane, r), s)
            k += 1
    return channels


def extract_features(frame: Frame, extractor: Extractor, label: LabelMap | None = None) -> FeatureMap:
    """Run the configured extractor on one frame (pure, deterministic)."""
    _check_frame_stride(frame, extractor.stride)
    if isinstance(extractor, OracleExtractor):
        if label is None:
            raise ValidationError("oracle extractor requires a ground-truth label map")
        values = _oracle_features(frame, extractor, label)
    elif isinstance(extractor, HandcraftExtractor):
        values = _handcraft_features(frame, extractor)
    else:
        raise ValidationError(f"unknown extractor {extractor!r}")
    return FeatureMap(values=values, stride=extractor.stride)


# ---------------------------------------------------------------------------
# Task head
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskHead:
    proj_w: np.ndarray  # (P, A) float32
    proj_b: np.ndarray  # (P,)
    score_w: np.ndarray  # (C, P)
    score_b: np.ndarray  # (C,)
    stride: int = 16

    def __post_init__(self):
        p, a = self.proj_w.shape
        if self.proj_b.shape != (p,):
            raise ValidationError("projection bias shape mismatch")
        c, p2 = self.score_w.shape
        if p2 != p or self.score_b.shape != (c,):
            raise ValidationError("scoring layer shape mismatch")

    @property
    def in_channels(self) -> int:
        return self.proj_w.shape[1]

    @property
    def num_classes(self) -> int:
        return self.score_w.shape[0]


@dataclass(frozen=True)
class SegmentationMap:
    labels: np.ndarray  # (H, W) uint8
    probs: np.ndarray | None = None  # (C, H, W) float32

    def __post_init__(self):
        if self.labels.ndim != 2 or self.labels.dtype != np.uint8:
            raise ValidationError("segmentation labels must be uint8 (H, W)")


def _interp_matrix(out_len: int, in_len: int, s: int) -> np.ndarray:
    """Bilinear upsampling operator: out pixel t samples (t + 0.5)/s - 0.5."""
    src = np.clip((np.arange(out_len) + 0.5) / s - 0.5, 0.0, in_len - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_len - 1)
    w1 = (src - i0).astype(np.float32)
    mat = np.zeros((out_len, in_len), dtype=np.float32)
    rows = np.arange(out_len)
    mat[rows, i0] += 1.0 - w1
    mat[rows, i1] += w1
    return mat


def upsample_scores(scores: np.ndarray, s: int) -> np.ndarray:
    """(C, gh, gw) -> (C, gh*s, gw*s) separable bilinear upsampling."""
    c, gh, gw = scores.shape
    ky = _interp_matrix(gh * s, gh, s)
    kx = _interp_matrix(gw * s, gw, s)
    out = np.empty((c, gh * s, gw * s), dtype=np.float32)
    for i in range(c):
        out[i] = ky @ scores[i] @ kx.T
    return out


def run_task_head(f: FeatureMap, head: TaskHead, return_probs: bool = False) -> SegmentationMap:
    """Project, ReLU, score, upsample to full resolution, softmax, argmax."""
    if f.channels != head.in_channels:
        raise ValidationError(
            f"feature channels {f.channels} do not match head input {head.in_channels}"
        )
    a, gh, gw = f.values.shape
    flat = f.values.reshape(a, gh * gw)
    z = head.proj_w @ flat + head.proj_b[:, None]
    np.maximum(z, 0.0, out=z)
    scores = (head.score_w @ z + head.score_b[:, None]).reshape(-1, gh, gw)
    up = upsample_scores(scores, f.stride)
    up -= up.max(axis=0, keepdims=True)
    np.exp(up, out=up)
    up /= up.sum(axis=0, keepdims=True)
    labels = up.argmax(axis=0).astype(np.uint8)
    return SegmentationMap(labels=labels, probs=up if return_probs else None)


def cell_majority(label: LabelMap, stride: int, num_classes: int) -> np.ndarray:
    """Most frequent class per stride x stride cell (ties: lowest id)."""
    gh, gw = label.height // stride, label.width // stride
    cell = np.arange(gh * gw).reshape(gh, gw).repeat(stride, 0).repeat(stride, 1).ravel()
    counts = np.bincount(
        cell * num_classes + label.labels.ravel(), minlength=gh * gw * num_classes
    ).reshape(gh, gw, num_classes)
    return counts.argmax(axis=2)


def fit_task_head(
    features: list[FeatureMap],
    labels: list[LabelMap],
    lam: float = 1e-3,
    seed: int = 0,
    num_classes: int | None = None,
) -> TaskHead:
    """Closed-form head fit.

    The projection is a fixed seeded channel-pooling map: a random partition
    of the input channels into P groups, each row the normalized indicator of
    one group. Rows are exactly orthonormal, and since the extractors emit
    nonnegative statistics the ReLU passes the pooled activations through
    intact. Both biases stay zero, so the fitted head is positively
    homogeneous and argmax decisions are invariant to positive rescaling of
    the features (relevant when fusing weighted maps). Scoring weights come
    from bias-free ridge regression onto one-hot cell-majority labels.
    """
    if not features or len(features) != len(labels):
        raise ValidationError("need at least one (features, labels) pair, aligned")
    if lam < 0:
        raise ValidationError("ridge coefficient must be >= 0")
    a = features[0].channels
    s = features[0].stride
    c = num_classes if num_classes is not None else int(max(lm.labels.max() for lm in labels)) + 1
    if c > 255:
        raise ValidationError("class count must fit uint8 labels")
    p = max(a // 2, c)
    if p > a:
        raise ValidationError(f"projection width {p} cannot exceed channel count {a}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(a)
    bounds = [round(i * a / p) for i in range(p + 1)]
    proj_w = np.zeros((p, a), dtype=np.float32)
    for i in range(p):
        group = perm[bounds[i] : bounds[i + 1]]
        proj_w[i, group] = 1.0 / np.sqrt(len(group))

    cols = []
    targets = []
    for fm, lm in zip(features, labels):
        if fm.channels != a or fm.stride != s:
            raise ValidationError("all feature maps must share channels and stride")
        flat = fm.values.reshape(a, -1)
        cols.append(proj_w.astype(np.float64) @ flat.astype(np.float64))
        maj = cell_majority(lm, s, c).ravel()
        one_hot = np.zeros((c, maj.size), dtype=np.float64)
        one_hot[maj, np.arange(maj.size)] = 1.0
        targets.append(one_hot)
    z = np.maximum(np.concatenate(cols, axis=1), 0.0)
    y = np.concatenate(targets, axis=1)

    gram = z @ z.T + lam * np.eye(p)
    w = np.linalg.solve(gram, z @ y.T)  # (P, C)
    return TaskHead(
        proj_w=proj_w,
        proj_b=np.zeros(p, dtype=np.float32),
        score_w=np.ascontiguousarray(w.T.astype(np.float32)),
        score_b=np.zeros(c, dtype=np.float32),
        stride=s,
    )


# ---------------------------------------------------------------------------
# Persistence: FMAP feature caches and HEAD weight files
# ---------------------------------------------------------------------------

_FMAP_MAGIC = b"FMAP"
_HEAD_MAGIC = b"HEAD"


def write_fmap(f: FeatureMap, path: str | Path) -> None:
    header = _FMAP_MAGIC + np.array(
        [f.channels, f.grid_height, f.grid_width, f.stride], dtype="<u4"
    ).tobytes()
    Path(path).write_bytes(header + f.values.astype("<f4").tobytes())


def read_fmap(path: str | Path) -> FeatureMap:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != _FMAP_MAGIC:
        raise FormatError(f"{path}: not an FMAP file")
    a, gh, gw, stride = (int(v) for v in np.frombuffer(data[4:20], dtype="<u4"))
    expected = 20 + a * gh * gw * 4
    if len(data) < expected:
        raise FormatError(f"{path}: truncated FMAP payload")
    values = np.frombuffer(data[20:expected], dtype="<f4").reshape(a, gh, gw)
    return FeatureMap(values=values.astype(np.float32), stride=stride)


def write_weight_arrays(arrays: list[np.ndarray], stride: int, path: str | Path) -> None:
    parts = [_HEAD_MAGIC, np.array([stride, len(arrays)], dtype="<u4").tobytes()]
    for arr in arrays:
        parts.append(np.array([arr.ndim, *arr.shape], dtype="<u4").tobytes())
        parts.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_weight_arrays(path: str | Path) -> tuple[list[np.ndarray], int]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _HEAD_MAGIC:
        raise FormatError(f"{path}: not a HEAD file")
    stride, count = (int(v) for v in np.frombuffer(data[4:12], dtype="<u4"))
    off = 12
    arrays = []
    for _ in range(count):
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated HEAD file")
        ndim = int(np.frombuffer(data[off : off + 4], dtype="<u4")[0])
        off += 4
        shape = tuple(int(v) for v in np.frombuffer(data[off : off + 4 * ndim], dtype="<u4"))
        off += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        if off + 4 * size > len(data):
            raise FormatError(f"{path}: truncated HEAD payload")
        arrays.append(np.frombuffer(data[off : off + 4 * size], dtype="<f4").reshape(shape).copy())
        off += 4 * size
    return arrays, stride


def write_task_head(head: TaskHead, path: str | Path) -> None:
    write_weight_arrays(
        [head.proj_w, head.proj_b, head.score_w, head.score_b], head.stride, path
    )


def read_task_head(path: str | Path) -> TaskHead:
    arrays, stride = read_weight_arrays(path)
    if len(arrays) != 4:
        raise FormatError(f"{path}: expected 4 weight arrays, found {len(arrays)}")
    return TaskHead(
        proj_w=arrays[0], proj_b=arrays[1], score_w=arrays[2], score_b=arrays[3], stride=stride
    )

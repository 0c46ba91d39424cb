"""End-to-end schemes: per-frame baseline, feature propagation, and
bidirectional feature interpolation, with keyframe scheduling, per-stage
timing, and work counters.

Motion is supplied by a MotionSource. Acquisition (sidecar reads, or live
estimation) is timed in its own bucket outside the per-frame inference
accounting, mirroring the treatment of compressed-video motion as a free
input; pass ``include_ingest=True`` to the throughput helpers to fold it
back in.

All three schemes emit segmentations in frame order. Interpolation buffers
one keyframe interval of lookahead (its reported delay); each keyframe's
features are extracted exactly once and reused as the next window's starting
point.
"""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .block_motion import MotionVectorMap, SearchParams, estimate_motion, read_mvec
from .errors import ValidationError
from .feature_sim import (
    Extractor,
    FeatureMap,
    SegmentationMap,
    TaskHead,
    extract_features,
    run_task_head,
)
from .frame_io import VideoSequence
from .fusion import FusionConfig, compose_fused_head, fuse, relevance_weights
from .warp import mv_to_field, warp_features

SCHEMES = ("baseline", "prop", "interp")
FWD_PATTERN = "fwd_%06d.mvec"
BWD_PATTERN = "bwd_%06d.mvec"


@dataclass(frozen=True)
class ScheduleConfig:
    extractor: Extractor
    scheme: str = "baseline"
    interval: int = 1
    backward: str = "estimate"  # estimate | negate
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if self.interval < 1:
            raise ValidationError("keyframe interval must be >= 1")
        if self.backward not in ("estimate", "negate"):
            raise ValidationError(f"unknown backward mode {self.backward!r}")

    @property
    def effective_interval(self) -> int:
        return 1 if self.scheme == "baseline" else self.interval


@dataclass
class TimingBreakdown:
    stage_seconds: dict[str, float]
    keyframe_seconds: float
    intermediate_seconds: float
    keyframe_count: int
    intermediate_count: int
    counters: dict[str, int]
    warp_distances: list[int]  # per frame: steps from the nearest used keyframe
    wall_seconds: float


@dataclass
class PipelineResult:
    scheme: str
    interval: int
    segmentations: list[SegmentationMap]
    offsets: list[int]
    timing: TimingBreakdown
    delay: int


class _Recorder:
    def __init__(self, n_frames: int):
        self.stages: dict[str, float] = defaultdict(float)
        self.counters: dict[str, int] = defaultdict(int)
        self.key_s = self.int_s = 0.0
        self.key_n = self.int_n = 0
        self.distances = [0] * n_frames

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] += time.perf_counter() - t0

    @contextmanager
    def frame(self, kind: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            dt = time.perf_counter() - t0
            if kind == "key":
                self.key_s += dt
                self.key_n += 1
            else:
                self.int_s += dt
                self.int_n += 1

    def count(self, name: str, k: int = 1):
        self.counters[name] += k

    def build(self, wall: float) -> TimingBreakdown:
        return TimingBreakdown(
            stage_seconds=dict(self.stages),
            keyframe_seconds=self.key_s,
            intermediate_seconds=self.int_s,
            keyframe_count=self.key_n,
            intermediate_count=self.int_n,
            counters=dict(self.counters),
            warp_distances=self.distances,
            wall_seconds=wall,
        )


# ---------------------------------------------------------------------------
# Motion sources
# ---------------------------------------------------------------------------


class MotionSource:
    """Provides per-frame motion maps. ``forward(i)`` matches frame i against
    frame i-1; ``backward(i)`` matches frame i against frame i+1."""

    bucket = "ingest"

    def forward(self, i: int) -> MotionVectorMap:
        raise NotImplementedError

    def backward(self, i: int) -> MotionVectorMap:
        raise NotImplementedError


class ArrayMotionSource(MotionSource):
    def __init__(self, forward=None, backward=None):
        self._fwd = forward
        self._bwd = backward

    def forward(self, i):
        if self._fwd is None or not 0 <= i < len(self._fwd) or self._fwd[i] is None:
            raise ValidationError(f"missing forward motion for frame {i}")
        return self._fwd[i]

    def backward(self, i):
        if self._bwd is None or not 0 <= i < len(self._bwd) or self._bwd[i] is None:
            raise ValidationError(f"missing backward motion for frame {i}")
        return self._bwd[i]


class SidecarMotionSource(MotionSource):
    def __init__(self, directory):
        self.directory = Path(directory)

    def _read(self, pattern: str, kind: str, i: int) -> MotionVectorMap:
        path = self.directory / (pattern % i)
        if not path.is_file():
            raise ValidationError(f"missing {kind} motion sidecar for frame {i}: {path}")
        return read_mvec(path)

    def forward(self, i):
        return self._read(FWD_PATTERN, "forward", i)

    def backward(self, i):
        return self._read(BWD_PATTERN, "backward", i)


class EstimatingMotionSource(MotionSource):
    """Estimates motion on demand (cached); timed as estimation, not ingest."""

    bucket = "motion_estimate"

    def __init__(self, video: VideoSequence, params: SearchParams = SearchParams()):
        self.video = video
        self.params = params
        self._cache: dict[tuple[str, int], MotionVectorMap] = {}

    def forward(self, i):
        if not 1 <= i < len(self.video):
            raise ValidationError(f"missing forward motion for frame {i}")
        key = ("f", i)
        if key not in self._cache:
            self._cache[key] = estimate_motion(
                self.video.frames[i - 1], self.video.frames[i], self.params
            )
        return self._cache[key]

    def backward(self, i):
        if not 0 <= i < len(self.video) - 1:
            raise ValidationError(f"missing backward motion for frame {i}")
        key = ("b", i)
        if key not in self._cache:
            self._cache[key] = estimate_motion(
                self.video.frames[i + 1], self.video.frames[i], self.params
            )
        return self._cache[key]


# ---------------------------------------------------------------------------
# Scheme runners
# ---------------------------------------------------------------------------


def _extractor_fn(video: VideoSequence, cfg: ScheduleConfig, rec: _Recorder):
    def ex(i: int) -> FeatureMap:
        with rec.stage("extract"):
            rec.count("extract_calls")
            label = video.labels[i] if video.labels is not None else None
            return extract_features(video.frames[i], cfg.extractor, label)

    return ex


def _segment(f: FeatureMap, head: TaskHead, rec: _Recorder) -> SegmentationMap:
    with rec.stage("head"):
        rec.count("head_calls")
        return run_task_head(f, head)


def _acquire_fwd(motion: MotionSource, i: int, rec: _Recorder) -> MotionVectorMap:
    with rec.stage(motion.bucket):
        return motion.forward(i)


def _acquire_bwd(motion: MotionSource, i: int, cfg: ScheduleConfig, rec: _Recorder) -> MotionVectorMap:
    with rec.stage(motion.bucket):
        if cfg.backward == "negate":
            return motion.forward(i + 1).negated()
        return motion.backward(i)


def _to_field(mv: MotionVectorMap, stride: int, direction: str, rec: _Recorder):
    with rec.stage("field"):
        rec.count("field_calls")
        return mv_to_field(mv, stride, direction)


def _warp(f: FeatureMap, d, rec: _Recorder) -> FeatureMap:
    with rec.stage("warp"):
        rec.count("warp_calls")
        return warp_features(f, d)


def run_baseline(video: VideoSequence, cfg: ScheduleConfig, head: TaskHead) -> PipelineResult:
    """Fresh features plus task head on every frame; zero lookahead."""
    t0 = time.perf_counter()
    rec = _Recorder(len(video))
    ex = _extractor_fn(video, cfg, rec)
    segs = []
    for i in range(len(video)):
        with rec.frame("key"):
            segs.append(_segment(ex(i), head, rec))
    return PipelineResult(
        scheme="baseline",
        interval=1,
        segmentations=segs,
        offsets=[0] * len(video),
        timing=rec.build(time.perf_counter() - t0),
        delay=0,
    )


def run_propagation(
    video: VideoSequence, motion: MotionSource, cfg: ScheduleConfig, head: TaskHead
) -> PipelineResult:
    """Keyframes extract fresh features; intermediate frames warp the cached
    features one step along the current frame's motion, then run the head.
    The cache always advances to whatever features were used."""
    n = cfg.effective_interval
    t0 = time.perf_counter()
    rec = _Recorder(len(video))
    ex = _extractor_fn(video, cfg, rec)
    stride = cfg.extractor.stride
    segs = []
    cached: FeatureMap | None = None
    for i in range(len(video)):
        if i % n == 0:
            with rec.frame("key"):
                f = ex(i)
                segs.append(_segment(f, head, rec))
        else:
            mv = _acquire_fwd(motion, i, rec)
            with rec.frame("inter"):
                f = _warp(cached, _to_field(mv, stride, "forward", rec), rec)
                segs.append(_segment(f, head, rec))
            rec.distances[i] = i % n
        cached = f
    return PipelineResult(
        scheme="prop",
        interval=n,
        segmentations=segs,
        offsets=[i % n for i in range(len(video))],
        timing=rec.build(time.perf_counter() - t0),
        delay=0,
    )


def _fused_segment(
    wf: FeatureMap,
    wb: FeatureMap,
    alpha: float,
    cfg: ScheduleConfig,
    head: TaskHead,
    merged_head: TaskHead | None,
    rec: _Recorder,
) -> SegmentationMap:
    if cfg.fusion.operator == "conv":
        # weighted channel stack only; the fusion map itself is folded into
        # the merged head's projection so inference cost matches avg/max
        with rec.stage("fuse"):
            rec.count("fuse_calls")
            stacked = FeatureMap(
                values=np.concatenate(
                    [np.float32(alpha) * wf.values, np.float32(1.0 - alpha) * wb.values], axis=0
                ),
                stride=wf.stride,
            )
        return _segment(stacked, merged_head, rec)
    with rec.stage("fuse"):
        rec.count("fuse_calls")
        fused = fuse(wf, wb, alpha, cfg.fusion)
    return _segment(fused, head, rec)


def run_interpolation(
    video: VideoSequence, motion: MotionSource, cfg: ScheduleConfig, head: TaskHead
) -> PipelineResult:
    """Bidirectional scheme: each keyframe window precomputes features warped
    forward from the current keyframe and backward from the next, then fuses
    the pair at each intermediate offset. Lookahead (delay) is one interval.
    A stream that ends mid-window falls back to forward-only propagation."""
    n = cfg.effective_interval
    t = len(video)
    t0 = time.perf_counter()
    rec = _Recorder(t)
    ex = _extractor_fn(video, cfg, rec)
    stride = cfg.extractor.stride
    merged_head = compose_fused_head(head, cfg.fusion) if cfg.fusion.operator == "conv" else None
    segs: list[SegmentationMap] = []

    f_key: FeatureMap | None = None
    for k in range(0, t, n):
        j = k + n
        if j < t:
            # motion acquisition stays outside the per-frame inference timers
            fwd_mvs = [_acquire_fwd(motion, i, rec) for i in range(k + 1, j)]
            bwd_mvs = [_acquire_bwd(motion, i, cfg, rec) for i in range(j - 1, k, -1)]
            with rec.frame("key"):
                if f_key is None:
                    f_key = ex(k)
                segs.append(_segment(f_key, head, rec))
                f_next = ex(j)
                wf = [f_key]
                for mv in fwd_mvs:
                    wf.append(_warp(wf[-1], _to_field(mv, stride, "forward", rec), rec))
                wb = [f_next]
                for mv in bwd_mvs:
                    wb.append(_warp(wb[-1], _to_field(mv, stride, "backward", rec), rec))
            for p in range(1, n):
                if k + p >= t:
                    break
                alpha, _ = relevance_weights(n, p)
                with rec.frame("inter"):
                    segs.append(_fused_segment(wf[p], wb[n - p], alpha, cfg, head, merged_head, rec))
                rec.distances[k + p] = min(p, n - p)
            f_key = f_next
        else:
            # tail: no next keyframe in the stream
            fwd_mvs = {i: _acquire_fwd(motion, i, rec) for i in range(k + 1, t)}
            with rec.frame("key"):
                if f_key is None:
                    f_key = ex(k)
                segs.append(_segment(f_key, head, rec))
            f = f_key
            for i in range(k + 1, t):
                with rec.frame("inter"):
                    f = _warp(f, _to_field(fwd_mvs[i], stride, "forward", rec), rec)
                    segs.append(_segment(f, head, rec))
                rec.distances[i] = i - k
    return PipelineResult(
        scheme="interp",
        interval=n,
        segmentations=segs,
        offsets=[i % n for i in range(t)],
        timing=rec.build(time.perf_counter() - t0),
        delay=n,
    )


def run_scheme(
    video: VideoSequence,
    cfg: ScheduleConfig,
    head: TaskHead,
    motion: MotionSource | None = None,
) -> PipelineResult:
    if cfg.scheme == "baseline":
        return run_baseline(video, cfg, head)
    if motion is None:
        raise ValidationError(f"scheme {cfg.scheme!r} requires a motion source")
    if cfg.scheme == "prop":
        return run_propagation(video, motion, cfg, head)
    return run_interpolation(video, motion, cfg, head)


# ---------------------------------------------------------------------------
# Rotating-offset evaluation protocol
# ---------------------------------------------------------------------------


def rotate_offset_eval(labeled_indices, interval: int) -> list[int]:
    """Offsets assigned to successive labeled frames, cycling 0..interval-1,
    so each offset receives an equal (+-1) share of the labeled frames."""
    if interval < 1:
        raise ValidationError("interval must be >= 1")
    return [j % interval for j in range(len(labeled_indices))]


def evaluate_rotating(
    video: VideoSequence,
    motion: MotionSource | None,
    cfg: ScheduleConfig,
    head: TaskHead,
    labeled_indices=None,
):
    """Predict each labeled frame with its keyframe placed at the rotation's
    offset; returns [(frame_index, actual_offset, SegmentationMap)].

    Offsets are clamped at the start of the stream (a labeled frame earlier
    than its assigned offset uses frame 0 as keyframe and its true distance).
    """
    if labeled_indices is None:
        labeled_indices = list(range(len(video)))
    if not labeled_indices:
        raise ValidationError("no labeled frames to evaluate")
    n = cfg.effective_interval
    rec = _Recorder(len(video))
    ex = _extractor_fn(video, cfg, rec)
    stride = cfg.extractor.stride
    merged_head = compose_fused_head(head, cfg.fusion) if cfg.fusion.operator == "conv" else None
    out = []
    for ell, p in zip(labeled_indices, rotate_offset_eval(labeled_indices, n)):
        k = max(0, ell - p)
        p_eff = ell - k
        if cfg.scheme == "baseline" or p_eff == 0:
            out.append((ell, p_eff, _segment(ex(ell), head, rec)))
            continue
        f = ex(k)
        for i in range(k + 1, ell + 1):
            f = _warp(f, _to_field(_acquire_fwd(motion, i, rec), stride, "forward", rec), rec)
        if cfg.scheme == "prop" or k + n >= len(video):
            out.append((ell, p_eff, _segment(f, head, rec)))
        else:
            j = k + n
            fb = ex(j)
            for i in range(j - 1, ell - 1, -1):
                fb = _warp(
                    fb, _to_field(_acquire_bwd(motion, i, cfg, rec), stride, "backward", rec), rec
                )
            alpha, _ = relevance_weights(n, p_eff)
            out.append((ell, p_eff, _fused_segment(f, fb, alpha, cfg, head, merged_head, rec)))
    return out

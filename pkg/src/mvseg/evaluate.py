"""Accuracy metrics (mIoU over keyframe offsets), throughput measurement, and
the analytic per-frame cost model."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .feature_sim import SegmentationMap
from .frame_io import LabelMap
from .pipeline import PipelineResult


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """(C, C) counts; rows = ground truth, cols = prediction."""
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    p = pred.astype(np.int64).ravel()
    g = gt.astype(np.int64).ravel()
    if p.max(initial=0) >= num_classes or g.max(initial=0) >= num_classes:
        raise ValidationError("labels exceed the declared class count")
    return np.bincount(g * num_classes + p, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def miou_from_confusion(cm: np.ndarray) -> float:
    """Mean IoU over classes present in ground truth or prediction."""
    diag = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        raise ValidationError("confusion matrix is empty")
    return float((diag[present] / union[present]).mean())


def miou(preds: list[SegmentationMap], gts: list[LabelMap], num_classes: int) -> float:
    if len(preds) != len(gts) or not preds:
        raise ValidationError("need equally many predictions and ground-truth maps (>= 1)")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for sm, lm in zip(preds, gts):
        cm += confusion_matrix(sm.labels, lm.labels, num_classes)
    return miou_from_confusion(cm)


@dataclass(frozen=True)
class OffsetAccuracy:
    per_offset: dict[int, float]
    avg: float
    min: float


def per_offset_accuracy(
    result: PipelineResult, gts: list[LabelMap | None], num_classes: int
) -> OffsetAccuracy:
    """Group labeled frames by their keyframe offset; pooled mIoU per group,
    over all labeled frames (avg), and the worst per-offset value (min)."""
    if len(gts) != len(result.segmentations):
        raise ValidationError("ground-truth list must align with the segmentations")
    pooled = None
    by_offset: dict[int, np.ndarray] = {}
    labeled = 0
    for seg, gt, p in zip(result.segmentations, gts, result.offsets):
        if gt is None:
            continue
        labeled += 1
        cm = confusion_matrix(seg.labels, gt.labels, num_classes)
        pooled = cm if pooled is None else pooled + cm
        if p in by_offset:
            by_offset[p] += cm
        else:
            by_offset[p] = cm.copy()
    if labeled == 0:
        raise ValidationError("no labeled frames to evaluate")
    per_offset = {p: miou_from_confusion(cm) for p, cm in sorted(by_offset.items())}
    return OffsetAccuracy(
        per_offset=per_offset, avg=miou_from_confusion(pooled), min=min(per_offset.values())
    )


# ---------------------------------------------------------------------------
# Cost model and measured throughput
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    t_key_ms: float  # full feature extraction + task head
    t_inter_ms: float  # warp + fuse + task head
    t_motion_ms: float = 0.0  # extra per-frame motion estimation, if simulated

    def __post_init__(self):
        if self.t_key_ms <= 0:
            raise ValidationError("keyframe cost must be positive")
        if self.t_inter_ms < 0 or self.t_motion_ms < 0:
            raise ValidationError("stage costs must be nonnegative")
        if self.t_inter_ms > self.t_key_ms:
            warnings.warn(
                "intermediate-frame cost exceeds keyframe cost; no speedup is available",
                stacklevel=2,
            )


def predict_fps(model: CostModel, n: int, scheme: str = "prop") -> float:
    """Amortized frames per second for one keyframe window.

    Key + (n-1) intermediates cost t_key + (n-1)(t_inter + t_motion) ms; as
    the intermediate cost approaches zero the speedup approaches the n-fold
    bound over the per-frame baseline.
    """
    if n < 1:
        raise ValidationError("interval must be >= 1")
    if scheme == "baseline":
        return 1000.0 / model.t_key_ms
    if scheme not in ("prop", "interp"):
        raise ValidationError(f"unknown scheme {scheme!r}")
    window_ms = model.t_key_ms + (n - 1) * (model.t_inter_ms + model.t_motion_ms)
    return 1000.0 * n / window_ms


def measure_throughput(
    result: PipelineResult, include_ingest: bool = False
) -> tuple[float, dict[str, float]]:
    """Measured fps plus each stage's share of the counted wall time.

    Motion acquisition (sidecar reads or live estimation) is excluded by
    default; shares always sum to <= 1, the remainder being loop overhead.
    """
    stages = result.timing.stage_seconds
    acquisition = stages.get("ingest", 0.0) + stages.get("motion_estimate", 0.0)
    elapsed = result.timing.wall_seconds - (0.0 if include_ingest else acquisition)
    if elapsed <= 0:
        raise ValidationError("no elapsed time recorded")
    shares = {
        name: sec / elapsed
        for name, sec in sorted(stages.items())
        if include_ingest or name not in ("ingest", "motion_estimate")
    }
    return len(result.segmentations) / elapsed, shares


# ---------------------------------------------------------------------------
# Accuracy/throughput curve CSV
# ---------------------------------------------------------------------------

CURVE_FIELDS = ("scheme", "n", "miou_avg", "miou_min", "fps", "delay_frames")


def emit_curve(runs: list[tuple], path: str | Path | None = None) -> str:
    """Rows of (scheme, n, miou_avg, miou_min, fps, delay_frames), sorted by
    (scheme, n); returns the CSV text and optionally writes it."""
    if not runs:
        raise ValidationError("need at least one run to report")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_FIELDS)
    for scheme, n, avg, mn, fps, delay in sorted(runs, key=lambda r: (r[0], r[1])):
        writer.writerow([scheme, int(n), repr(float(avg)), repr(float(mn)), repr(float(fps)), int(delay)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text

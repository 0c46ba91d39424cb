"""Block-motion feature propagation and interpolation for fast per-frame
dense prediction on video, with a synthetic ground-truth benchmark."""

from .block_motion import (
    MotionVectorMap,
    ResidualMap,
    SearchParams,
    compute_residual,
    estimate_motion,
    read_mvec,
    reconstruct,
    write_mvec,
)
from .errors import FormatError, MvsegError, ValidationError
from .evaluate import CostModel, emit_curve, measure_throughput, miou, per_offset_accuracy, predict_fps
from .feature_sim import (
    FeatureMap,
    HandcraftExtractor,
    OracleExtractor,
    SegmentationMap,
    TaskHead,
    extract_features,
    fit_task_head,
    run_task_head,
)
from .frame_io import (
    Frame,
    LabelMap,
    SceneSpec,
    Sprite,
    VideoSequence,
    generate_synthetic,
    load_sequence,
    store_sequence,
)
from .fusion import FusionConfig, fit_conv_fusion, fuse, relevance_weights
from .kernels import BACKEND
from .pipeline import (
    ArrayMotionSource,
    EstimatingMotionSource,
    PipelineResult,
    ScheduleConfig,
    SidecarMotionSource,
    rotate_offset_eval,
    run_baseline,
    run_interpolation,
    run_propagation,
    run_scheme,
)
from .warp import DisplacementField, mv_to_field, propagate, warp_features

__version__ = "0.1.0"

"""Command-line surface: generate data, estimate motion, run schemes,
evaluate accuracy, benchmark sweeps, and report accuracy/throughput curves.

Exit codes: 0 success, 2 precondition/configuration error, 3 data-format
error. Every run writes a manifest with the fully resolved configuration so
it can be replayed bit-identically (wall-times aside). Flag values take
precedence over --config file entries, which take precedence over defaults.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import kernels
from .block_motion import SearchParams, estimate_motion, write_mvec
from .errors import FormatError, MvsegError, ValidationError
from .evaluate import emit_curve, measure_throughput, per_offset_accuracy
from .feature_sim import (
    HandcraftExtractor,
    OracleExtractor,
    extract_features,
    fit_task_head,
    write_task_head,
)
from .frame_io import SceneSpec, generate_synthetic, load_sequence, store_sequence, write_pgm
from .fusion import FusionConfig, fit_conv_fusion
from .pipeline import (
    BWD_PATTERN,
    FWD_PATTERN,
    EstimatingMotionSource,
    ScheduleConfig,
    SidecarMotionSource,
    run_scheme,
)
from .warp import mv_to_field, propagate

DEFAULTS = {
    "scheme": "baseline",
    "interval": 1,
    "fusion": "avg",
    "extractor": "oracle",
    "backward": "estimate",
    "seed": 0,
    "block_size": 16,
    "radius": 16,
    "sigma": 0.0,
    "channels": 16,
    "train_frames": 1,
    "ridge": 1e-3,
    "include_ingest_time": False,
}


def _threads() -> int:
    cap = os.environ.get("MVSEG_THREADS")
    limit = int(cap) if cap else 4
    return max(1, min(limit, os.cpu_count() or 1))


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """flags > config file > defaults, recording the chosen values."""
    cfg_file = {}
    if getattr(args, "config", None):
        try:
            cfg_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"cannot read config {args.config}: {e}") from e
    resolved = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in cfg_file:
            resolved[key] = cfg_file[key]
        else:
            resolved[key] = DEFAULTS[key]
    return resolved


def _build_extractor(opts: dict, num_classes: int):
    if opts["extractor"] == "oracle":
        return OracleExtractor(
            num_classes=num_classes, sigma=float(opts["sigma"]), seed=int(opts["seed"])
        )
    if opts["extractor"] == "handcraft":
        return HandcraftExtractor(channels=int(opts["channels"]))
    raise ValidationError(f"unknown extractor {opts['extractor']!r}")


def _load_labeled(path: str):
    seq = load_sequence(path)
    if seq.labels is None:
        raise ValidationError(f"sequence at {path} has no label maps")
    return seq


def _num_classes(seq) -> int:
    return int(max(lm.labels.max() for lm in seq.labels)) + 1


def _fit_head(seq, extractor, opts):
    k = int(opts["train_frames"])
    if not 1 <= k <= len(seq):
        raise ValidationError("train frame count out of range")
    feats = [extract_features(seq.frames[i], extractor, seq.labels[i]) for i in range(k)]
    return fit_task_head(
        feats, seq.labels[:k], lam=float(opts["ridge"]), seed=int(opts["seed"]),
        num_classes=_num_classes(seq),
    )


def _fit_conv_weights(seq, motion, extractor, interval, backward):
    """Fusion training samples from the first full keyframe window."""
    if len(seq) < interval + 1:
        raise ValidationError("sequence too short to fit conv fusion weights")
    stride = extractor.stride
    f0 = extract_features(seq.frames[0], extractor, seq.labels[0])
    fn = extract_features(seq.frames[interval], extractor, seq.labels[interval])
    fwd = [
        mv_to_field(motion.forward(i), stride, "forward") for i in range(1, interval)
    ]
    if backward == "negate":
        bwd = [
            mv_to_field(motion.forward(i + 1).negated(), stride, "backward")
            for i in range(interval - 1, 0, -1)
        ]
    else:
        bwd = [
            mv_to_field(motion.backward(i), stride, "backward")
            for i in range(interval - 1, 0, -1)
        ]
    wf = propagate(f0, interval - 1, fwd)
    wb = propagate(fn, interval - 1, bwd)
    samples = []
    for p in range(1, interval):
        target = extract_features(seq.frames[p], extractor, seq.labels[p])
        samples.append((wf[p], wb[interval - p], (interval - p) / interval, target))
    return fit_conv_fusion(samples)


def _schedule(opts: dict, seq, motion) -> tuple[ScheduleConfig, object]:
    extractor = _build_extractor(opts, _num_classes(seq))
    head = _fit_head(seq, extractor, opts)
    fusion = FusionConfig(operator=opts["fusion"])
    if opts["fusion"] == "conv" and opts["scheme"] == "interp":
        w, b = _fit_conv_weights(seq, motion, extractor, int(opts["interval"]), opts["backward"])
        fusion = FusionConfig(operator="conv", conv_w=w, conv_b=b)
    cfg = ScheduleConfig(
        extractor=extractor,
        scheme=opts["scheme"],
        interval=int(opts["interval"]),
        backward=opts["backward"],
        fusion=fusion,
    )
    return cfg, head


def _motion_source(args, seq, opts):
    if getattr(args, "mvecs", None):
        return SidecarMotionSource(args.mvecs)
    params = SearchParams(block_size=int(opts["block_size"]), radius=int(opts["radius"]))
    return EstimatingMotionSource(seq, params)


def _write_run_outputs(out_dir: Path, result, seq, opts, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, seg in enumerate(result.segmentations):
        write_pgm(seg.labels, out_dir / f"seg_{i:06d}.pgm")
    acc = per_offset_accuracy(result, seq.labels, _num_classes(seq))
    fps, shares = measure_throughput(result, include_ingest=bool(opts["include_ingest_time"]))
    manifest = {
        "command": command,
        "backend": kernels.BACKEND,
        "config": {k: opts[k] for k in sorted(opts)},
        "scheme": result.scheme,
        "interval": result.interval,
        "delay": result.delay,
        "counters": result.timing.counters,
        "results": {
            "miou_avg": acc.avg,
            "miou_min": acc.min,
            "per_offset": {str(k): v for k, v in acc.per_offset.items()},
        },
        "timing": {
            "fps": fps,
            "stage_shares": shares,
            "stage_seconds": result.timing.stage_seconds,
            "wall_seconds": result.timing.wall_seconds,
            "keyframe_seconds": result.timing.keyframe_seconds,
            "intermediate_seconds": result.timing.intermediate_seconds,
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SceneSpec.from_json(args.spec)
    seq = generate_synthetic(spec)
    out = Path(args.out)
    store_sequence(seq, out, fmt="ppm")
    manifest = {
        "command": "synth",
        "spec": json.loads(Path(args.spec).read_text()),
        "frames": len(seq),
        "classes": spec.num_classes,
    }
    (out / "synth_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(seq)} frames + labels to {out}")
    return 0


def cmd_encode(args) -> int:
    opts = _resolve(args, ["block_size", "radius"])
    seq = load_sequence(args.data)
    params = SearchParams(block_size=int(opts["block_size"]), radius=int(opts["radius"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def encode_pair(i: int):
        fwd = estimate_motion(seq.frames[i - 1], seq.frames[i], params)
        bwd = estimate_motion(seq.frames[i], seq.frames[i - 1], params)
        write_mvec(fwd, out / (FWD_PATTERN % i))
        write_mvec(bwd, out / (BWD_PATTERN % (i - 1)))
        return fwd, bwd

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(encode_pair, range(1, len(seq))))

    mags, zeros, total = [], 0, 0
    for fwd, bwd in results:
        for mv in (fwd, bwd):
            v = mv.vectors.astype(np.float64)
            mags.append(np.hypot(v[:, :, 0], v[:, :, 1]).mean())
            zeros += int((v == 0).all(axis=2).sum())
            total += v.shape[0] * v.shape[1]
    stats = {
        "command": "encode",
        "pairs": len(seq) - 1,
        "block_size": params.block_size,
        "radius": params.radius,
        "mean_magnitude": float(np.mean(mags)) if mags else 0.0,
        "zero_block_pct": 100.0 * zeros / total if total else 100.0,
    }
    (out / "encode_manifest.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(
        f"encoded {stats['pairs']} pairs: mean |mv| {stats['mean_magnitude']:.2f} px, "
        f"{stats['zero_block_pct']:.1f}% zero blocks"
    )
    return 0


_RUN_KEYS = [
    "scheme", "interval", "fusion", "extractor", "backward", "seed", "block_size",
    "radius", "sigma", "channels", "train_frames", "ridge", "include_ingest_time",
]


def cmd_run(args) -> int:
    opts = _resolve(args, _RUN_KEYS)
    seq = _load_labeled(args.data)
    motion = _motion_source(args, seq, opts)
    cfg, head = _schedule(opts, seq, motion)
    result = run_scheme(seq, cfg, head, motion)
    manifest = _write_run_outputs(Path(args.out), result, seq, opts, "run")
    res = manifest["results"]
    print(
        f"{result.scheme} n={result.interval}: miou_avg {res['miou_avg']:.4f} "
        f"miou_min {res['miou_min']:.4f} fps {manifest['timing']['fps']:.2f} "
        f"delay {result.delay}"
    )
    if args.head_out:
        write_task_head(head, args.head_out)
    return 0


def cmd_eval(args) -> int:
    opts = _resolve(args, _RUN_KEYS)
    seq = _load_labeled(args.data)
    motion = _motion_source(args, seq, opts)
    cfg, head = _schedule(opts, seq, motion)

    if args.rotate:
        from .evaluate import confusion_matrix, miou_from_confusion
        from .pipeline import evaluate_rotating

        stride = max(1, int(args.label_stride))
        labeled = list(range(0, len(seq), stride))
        preds = evaluate_rotating(seq, motion, cfg, head, labeled)
        c = _num_classes(seq)
        pooled = np.zeros((c, c), dtype=np.int64)
        groups: dict[int, np.ndarray] = {}
        for idx, offset, seg in preds:
            cm = confusion_matrix(seg.labels, seq.labels[idx].labels, c)
            pooled += cm
            groups[offset] = groups.get(offset, np.zeros_like(cm)) + cm
        per_offset = {p: miou_from_confusion(cm) for p, cm in sorted(groups.items())}
        avg, mn = miou_from_confusion(pooled), min(per_offset.values())
    else:
        result = run_scheme(seq, cfg, head, motion)
        acc = per_offset_accuracy(result, seq.labels, _num_classes(seq))
        per_offset, avg, mn = acc.per_offset, acc.avg, acc.min

    report = {
        "command": "eval",
        "config": {k: opts[k] for k in sorted(opts)},
        "rotate": bool(args.rotate),
        "per_offset": {str(k): v for k, v in per_offset.items()},
        "miou_avg": avg,
        "miou_min": mn,
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for p, v in per_offset.items():
        print(f"offset {p}: miou {v:.4f}")
    print(f"avg {avg:.4f}  min {mn:.4f}")
    return 0


def _parse_sweep(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(v) for v in text.split(",") if v]
    if not values or min(values) < 1:
        raise ValidationError(f"bad sweep range {text!r}")
    return values


def cmd_bench(args) -> int:
    opts = _resolve(args, _RUN_KEYS)
    seq = _load_labeled(args.data)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    sweep = _parse_sweep(args.sweep)
    out = Path(args.out)
    runs = 0
    for scheme in schemes:
        intervals = [1] if scheme == "baseline" else sweep
        for n in intervals:
            run_opts = dict(opts, scheme=scheme, interval=n)
            motion = _motion_source(args, seq, run_opts)
            cfg, head = _schedule(run_opts, seq, motion)
            result = run_scheme(seq, cfg, head, motion)
            _write_run_outputs(out / f"{scheme}_n{n:02d}", result, seq, run_opts, "bench")
            runs += 1
    print(f"bench complete: {runs} runs under {out}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for manifest_path in sorted(Path(args.bench).glob("*/manifest.json")):
        m = json.loads(manifest_path.read_text())
        rows.append(
            (
                m["scheme"],
                m["interval"],
                m["results"]["miou_avg"],
                m["results"]["miou_min"],
                m["timing"]["fps"],
                m["delay"],
            )
        )
    text = emit_curve(rows, args.out)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--scheme", choices=["baseline", "prop", "interp"])
    p.add_argument("--interval", type=int, help="keyframe interval n")
    p.add_argument("--fusion", choices=["max", "avg", "conv"])
    p.add_argument("--extractor", choices=["oracle", "handcraft"])
    p.add_argument("--backward", choices=["estimate", "negate"])
    p.add_argument("--seed", type=int)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--sigma", type=float, help="oracle feature noise")
    p.add_argument("--channels", type=int, help="handcraft channel count")
    p.add_argument("--train-frames", dest="train_frames", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument(
        "--include-ingest-time",
        dest="include_ingest_time",
        action="store_const",
        const=True,
        help="count motion acquisition in throughput",
    )
    p.add_argument("--mvecs", help="sidecar directory (default: estimate on the fly)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic labeled sequence")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("encode", help="estimate fwd/bwd motion sidecars")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--radius", type=int)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("run", help="run one scheme end to end")
    _add_common_run_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--head-out", dest="head_out", help="persist the fitted task head")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="accuracy by keyframe offset")
    _add_common_run_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--rotate", action="store_true", help="rotating-offset protocol")
    p.add_argument("--label-stride", dest="label_stride", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="sweep schemes x intervals")
    _add_common_run_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", default="1..10")
    p.add_argument("--schemes", default="baseline,prop,interp")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="merge bench manifests into the curve CSV")
    p.add_argument("--bench", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 3
    except MvsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

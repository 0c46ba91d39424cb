"""Frame and label I/O plus a synthetic scene generator with exact ground truth.

On-disk formats:
  * frames: binary PPM (P6), one file per frame named ``frame_%06d.ppm``,
    or a single-file raw planar RGB container (magic ``MVSQ``, u32 LE
    width/height/frame-count header, then per-frame R/G/B planes);
  * label maps: binary PGM (P5), one file per frame named ``label_%06d.pgm``,
    gray value = class id.

Frame dimensions must be multiples of the 16 px block grid; this is checked
at generation and load time.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

BLOCK_ALIGN = 16


def _check_aligned(width: int, height: int) -> None:
    if width <= 0 or height <= 0 or width % BLOCK_ALIGN or height % BLOCK_ALIGN:
        raise ValidationError(
            f"frame dimensions {width}x{height} must be positive multiples of {BLOCK_ALIGN}"
        )


@dataclass(frozen=True)
class Frame:
    """One video frame, uint8 pixels of shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValidationError(f"frame pixels must be (H, W, 1|3), got {p.shape}")
        if p.dtype != np.uint8:
            raise ValidationError(f"frame pixels must be uint8, got {p.dtype}")
        _check_aligned(p.shape[1], p.shape[0])

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def luma(self) -> np.ndarray:
        """ITU-R 601 luma plane as uint8 (H, W), integer arithmetic."""
        if self.channels == 1:
            return self.pixels[:, :, 0]
        p = self.pixels.astype(np.uint32)
        y = (299 * p[:, :, 0] + 587 * p[:, :, 1] + 114 * p[:, :, 2] + 500) // 1000
        return y.astype(np.uint8)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids, uint8 of shape (height, width)."""

    labels: np.ndarray

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValidationError(f"label map must be 2-D, got shape {self.labels.shape}")
        if self.labels.dtype != np.uint8:
            raise ValidationError(f"label map must be uint8, got {self.labels.dtype}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass
class VideoSequence:
    frames: list[Frame]
    labels: list[LabelMap] | None = None
    fps: float = 30.0

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("sequence must contain at least one frame")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if (f.width, f.height) != (w, h):
                raise ValidationError("all frames must share dimensions")
        if self.labels is not None:
            if len(self.labels) != len(self.frames):
                raise ValidationError("one label map per frame required")
            for lm in self.labels:
                if (lm.width, lm.height) != (w, h):
                    raise ValidationError("label maps must match frame dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass(frozen=True)
class Sprite:
    """A textured moving shape with an exact per-pixel label footprint.

    Position is the top-left corner of the sprite's bounding box at frame 0;
    it advances by `velocity` (vx, vy) pixels per frame, accumulated in real
    values and rendered at the nearest integer position. Sprites may start or
    travel off-canvas; only the visible part is drawn.
    """

    shape: str  # "rect" | "disk"
    class_id: int
    position: tuple[float, float]  # (x, y) top-left
    velocity: tuple[float, float]  # (vx, vy) px/frame
    size: tuple[int, int]  # (w, h)
    texture_seed: int = 0

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValidationError(f"unknown sprite shape {self.shape!r}")
        if not (0 < self.class_id < 256):
            raise ValidationError("sprite class id must be in [1, 255]")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValidationError("sprite size must be positive")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    frame_count: int
    seed: int = 0
    sprites: tuple[Sprite, ...] = field(default_factory=tuple)
    fps: float = 30.0
    background_noise: int = 64  # peak-to-peak amplitude of the background texture

    def __post_init__(self):
        _check_aligned(self.width, self.height)
        if self.frame_count <= 0:
            raise ValidationError("frame count must be positive")

    @property
    def num_classes(self) -> int:
        return 1 + max((s.class_id for s in self.sprites), default=0)

    @staticmethod
    def from_json(path: str | Path) -> "SceneSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"cannot read scene spec {path}: {e}") from e
        try:
            sprites = tuple(
                Sprite(
                    shape=s["shape"],
                    class_id=int(s["class_id"]),
                    position=tuple(s["position"]),
                    velocity=tuple(s["velocity"]),
                    size=tuple(s["size"]),
                    texture_seed=int(s.get("texture_seed", i + 1)),
                )
                for i, s in enumerate(raw.get("sprites", []))
            )
            return SceneSpec(
                width=int(raw["width"]),
                height=int(raw["height"]),
                frame_count=int(raw["frames"]),
                seed=int(raw.get("seed", 0)),
                sprites=sprites,
                fps=float(raw.get("fps", 30.0)),
                background_noise=int(raw.get("background_noise", 64)),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"scene spec {path} missing field: {e}") from e


def _sprite_texture(sprite: Sprite, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Texture (h, w, 3) and boolean footprint mask (h, w) for one sprite."""
    w, h = sprite.size
    rng = np.random.default_rng(rng_seed)
    base = rng.integers(40, 216, size=3)
    tex = rng.integers(-40, 41, size=(h, w, 3)) + base
    tex = np.clip(tex, 0, 255).astype(np.uint8)
    if sprite.shape == "rect":
        mask = np.ones((h, w), dtype=bool)
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        mask = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0
    return tex, mask


def generate_synthetic(spec: SceneSpec) -> VideoSequence:
    """Render a scene spec to frames plus exact per-pixel label maps.

    Pure function of the spec: the same spec always yields bit-identical
    output. Later sprites draw over earlier ones. Sprite texture is anchored
    to the sprite, so integer velocities translate pixel content exactly.
    """
    rng = np.random.default_rng(spec.seed)
    amp = int(np.clip(spec.background_noise, 0, 255))
    background = rng.integers(0, amp + 1, size=(spec.height, spec.width, 3)).astype(np.uint8)

    textures = [
        _sprite_texture(s, (spec.seed << 16) ^ (s.texture_seed * 2654435761 % (1 << 31)))
        for s in spec.sprites
    ]

    frames: list[Frame] = []
    labels: list[LabelMap] = []
    for t in range(spec.frame_count):
        canvas = background.copy()
        lab = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for sprite, (tex, mask) in zip(spec.sprites, textures):
            x = int(round(sprite.position[0] + t * sprite.velocity[0]))
            y = int(round(sprite.position[1] + t * sprite.velocity[1]))
            w, h = sprite.size
            x0, y0 = max(x, 0), max(y, 0)
            x1, y1 = min(x + w, spec.width), min(y + h, spec.height)
            if x0 >= x1 or y0 >= y1:
                continue
            sub = mask[y0 - y : y1 - y, x0 - x : x1 - x]
            region = canvas[y0:y1, x0:x1]
            region[sub] = tex[y0 - y : y1 - y, x0 - x : x1 - x][sub]
            lab[y0:y1, x0:x1][sub] = sprite.class_id
        frames.append(Frame(canvas))
        labels.append(LabelMap(lab))
    return VideoSequence(frames=frames, labels=labels, fps=spec.fps)


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(rb"^(P[56])\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def _parse_netpbm(data: bytes, magic: str):
    m = _HEADER_RE.match(data)
    if not m or m.group(1).decode() != magic:
        raise FormatError(f"not a {magic} file")
    width, height, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    payload = data[m.end() :]
    nch = 3 if magic == "P6" else 1
    expected = width * height * nch
    if len(payload) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    arr = np.frombuffer(payload[:expected], dtype=np.uint8)
    return arr.reshape(height, width, nch) if nch == 3 else arr.reshape(height, width)


def write_ppm(frame: Frame, path: str | Path) -> None:
    if frame.channels != 3:
        raise FormatError("PPM (P6) stores RGB frames only")
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode()
    Path(path).write_bytes(header + frame.pixels.tobytes())


def read_ppm(path: str | Path) -> Frame:
    pixels = _parse_netpbm(Path(path).read_bytes(), "P6")
    _check_aligned(pixels.shape[1], pixels.shape[0])
    return Frame(pixels.copy())


def write_pgm(labels: np.ndarray, path: str | Path) -> None:
    if labels.ndim != 2 or labels.dtype != np.uint8:
        raise FormatError("PGM (P5) stores a 2-D uint8 map")
    header = f"P5\n{labels.shape[1]} {labels.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + labels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    return _parse_netpbm(Path(path).read_bytes(), "P5").copy()


# ---------------------------------------------------------------------------
# MVSQ single-file raw planar container
# ---------------------------------------------------------------------------

_MVSQ_MAGIC = b"MVSQ"


def write_mvsq(seq: VideoSequence, path: str | Path) -> None:
    if seq.frames[0].channels != 3:
        raise FormatError("MVSQ stores RGB sequences only")
    w, h, t = seq.width, seq.height, len(seq)
    header = _MVSQ_MAGIC + np.array([w, h, t], dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        for frame in seq.frames:
            # planar layout: full R plane, then G, then B
            fh.write(np.ascontiguousarray(frame.pixels.transpose(2, 0, 1)).tobytes())


def read_mvsq(path: str | Path) -> VideoSequence:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MVSQ_MAGIC:
        raise FormatError("not an MVSQ file (bad magic)")
    w, h, t = (int(v) for v in np.frombuffer(data[4:16], dtype="<u4"))
    _check_aligned(w, h)
    if t < 1:
        raise FormatError("MVSQ frame count must be >= 1")
    expected = 16 + t * 3 * w * h
    if len(data) < expected:
        raise FormatError(f"truncated MVSQ payload: expected {expected} bytes, got {len(data)}")
    frames = []
    for i in range(t):
        off = 16 + i * 3 * w * h
        planes = np.frombuffer(data[off : off + 3 * w * h], dtype=np.uint8).reshape(3, h, w)
        frames.append(Frame(np.ascontiguousarray(planes.transpose(1, 2, 0))))
    return VideoSequence(frames=frames)


# ---------------------------------------------------------------------------
# Directory-level sequence persistence
# ---------------------------------------------------------------------------

FRAME_PATTERN = "frame_%06d.ppm"
LABEL_PATTERN = "label_%06d.pgm"


def store_sequence(seq: VideoSequence, path: str | Path, fmt: str = "ppm") -> None:
    """Persist a sequence. ``ppm`` writes a directory of per-frame files
    (plus ``labels/`` when present); ``mvsq`` writes one raw container file."""
    if fmt == "mvsq":
        write_mvsq(seq, path)
        return
    if fmt != "ppm":
        raise FormatError(f"unknown sequence format {fmt!r}")
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_ppm(frame, root / "frames" / (FRAME_PATTERN % i))
    if seq.labels is not None:
        (root / "labels").mkdir(parents=True, exist_ok=True)
        for i, lm in enumerate(seq.labels):
            write_pgm(lm.labels, root / "labels" / (LABEL_PATTERN % i))
    meta = {"frames": len(seq), "fps": seq.fps, "width": seq.width, "height": seq.height}
    (root / "sequence.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_sequence(path: str | Path, fmt: str = "ppm") -> VideoSequence:
    if fmt == "mvsq":
        return read_mvsq(path)
    if fmt != "ppm":
        raise FormatError(f"unknown sequence format {fmt!r}")
    root = Path(path)
    frame_paths = sorted((root / "frames").glob("frame_*.ppm"))
    if not frame_paths:
        raise FormatError(f"no frames found under {root}/frames")
    frames = [read_ppm(p) for p in frame_paths]
    labels = None
    label_paths = sorted((root / "labels").glob("label_*.pgm")) if (root / "labels").is_dir() else []
    if label_paths:
        if len(label_paths) != len(frames):
            raise FormatError("label count does not match frame count")
        labels = [LabelMap(read_pgm(p)) for p in label_paths]
    fps = 30.0
    meta_path = root / "sequence.json"
    if meta_path.is_file():
        try:
            fps = float(json.loads(meta_path.read_text()).get("fps", 30.0))
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise FormatError(f"malformed sequence.json: {e}") from e
    return VideoSequence(frames=frames, labels=labels, fps=fps)

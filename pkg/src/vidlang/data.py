"""Synthetic video-text corpora, frame sampling, and patchification.

The synthetic corpus shows 1-3 colored shapes moving along linear or circular
paths on a black background. Captions are template sentences ("a red square
moves left") that name shape, color, and motion direction, so direction words
can only be resolved from temporal order: a left-moving shape traverses the
same positions as a right-moving one, reversed in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ManifestError
from .seeding import derived_rng

SHAPES = ("square", "circle", "triangle", "cross")
COLORS = {
    "red": (1.0, 0.1, 0.1),
    "green": (0.1, 0.9, 0.1),
    "blue": (0.15, 0.3, 1.0),
    "yellow": (1.0, 0.9, 0.1),
    "magenta": (0.9, 0.1, 0.9),
    "cyan": (0.1, 0.9, 0.9),
}
LINEAR_DIRECTIONS = ("left", "right", "up", "down")
CIRCULAR_DIRECTIONS = ("clockwise", "counterclockwise")
DIRECTIONS = LINEAR_DIRECTIONS + CIRCULAR_DIRECTIONS

OPPOSITE_DIRECTION = {
    "left": "right",
    "right": "left",
    "up": "down",
    "down": "up",
    "clockwise": "counterclockwise",
    "counterclockwise": "clockwise",
}


@dataclass(frozen=True)
class VideoClip:
    """A raw clip: (F, H_px, W_px, 3) float32 pixels in [0, 1] plus caption."""

    frames: np.ndarray
    clip_id: str
    caption: str

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be (F, H, W, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("clip must contain at least one frame")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SampledClip:
    """T frames selected from a clip; source_indices strictly increasing."""

    frames: np.ndarray
    source_indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.source_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("source_indices must be strictly increasing")


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping tiling of T frames into (T, H, W) patches of P x P x 3."""

    patches: np.ndarray  # (T, H, W, P, P, 3)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.patches.shape[:3]

    @property
    def patch_size(self) -> int:
        return self.patches.shape[3]


@dataclass(frozen=True)
class ShapeMotion:
    """One shape's motion program: appearance plus per-frame centers."""

    shape: str
    color: str
    direction: str
    half_size: float
    centers: np.ndarray  # (F, 2) float (x, y)

    def phrase(self) -> str:
        return f"a {self.color} {self.shape} moves {self.direction}"


def caption_for(programs: list[ShapeMotion]) -> str:
    return " and ".join(p.phrase() for p in programs)


def _shape_mask(shape: str, cx: float, cy: float, s: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    dx, dy = xs - cx, ys - cy
    if shape == "square":
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if shape == "circle":
        return dx * dx + dy * dy <= s * s
    if shape == "triangle":
        return (dy >= -s) & (dy <= s) & (np.abs(dx) <= (dy + s) / 2.0)
    if shape == "cross":
        bar = s / 3.0
        return ((np.abs(dx) <= bar) & (np.abs(dy) <= s)) | (
            (np.abs(dy) <= bar) & (np.abs(dx) <= s)
        )
    raise ValueError(f"unknown shape {shape!r}")


def _sample_program(rng: np.random.Generator, n_frames: int, resolution: int,
                    used: set[tuple[str, str]], shape: str | None = None,
                    color: str | None = None,
                    direction: str | None = None) -> ShapeMotion:
    # Distinct (shape, color) pairs within a clip keep the caption unambiguous.
    while True:
        picked_shape = shape if shape is not None else str(rng.choice(SHAPES))
        picked_color = color if color is not None else str(rng.choice(list(COLORS)))
        if (picked_shape, picked_color) not in used:
            used.add((picked_shape, picked_color))
            break
    shape, color = picked_shape, picked_color
    if direction is None:
        direction = str(rng.choice(DIRECTIONS))
    s = float(rng.uniform(resolution / 8.0, resolution / 5.0))

    if direction in LINEAR_DIRECTIONS:
        lo, hi = s + 1.0, resolution - 2.0 - s
        travel = min(0.5 * resolution, 0.8 * (hi - lo))
        start = float(rng.uniform(lo, hi - travel))
        fixed = float(rng.uniform(lo, hi))
        steps = np.linspace(start, start + travel, n_frames) if n_frames > 1 else np.array([start])
        if direction in ("left", "right"):
            centers = np.stack([steps, np.full(n_frames, fixed)], axis=1)
        else:
            centers = np.stack([np.full(n_frames, fixed), steps], axis=1)
        # The canonical traversal is ascending x (rightward) / ascending y
        # (downward, since rows grow downward); the opposite word reverses it.
        if direction in ("left", "up"):
            centers = centers[::-1].copy()
    else:
        radius = float(rng.uniform(resolution / 6.0, resolution / 4.0))
        radius = min(radius, max(1.0, (resolution - 1.0) / 2.0 - s - 1.5))
        margin = radius + s + 1.0
        ccx = float(rng.uniform(margin, resolution - 1.0 - margin))
        ccy = float(rng.uniform(margin, resolution - 1.0 - margin))
        theta0 = float(rng.uniform(0.0, 2.0 * math.pi))
        sweep = 1.5 * math.pi
        thetas = theta0 + np.linspace(0.0, sweep, n_frames)
        # Ascending angle moves right -> down in image coordinates, i.e.
        # visually clockwise; counterclockwise reverses the traversal.
        centers = np.stack([ccx + radius * np.cos(thetas), ccy + radius * np.sin(thetas)], axis=1)
        if direction == "counterclockwise":
            centers = centers[::-1].copy()

    return ShapeMotion(shape, color, direction, s, centers)


def render_clip(programs: list[ShapeMotion], n_frames: int, resolution: int) -> np.ndarray:
    frames = np.zeros((n_frames, resolution, resolution, 3), dtype=np.float32)
    for t in range(n_frames):
        for prog in programs:
            cx, cy = prog.centers[t]
            mask = _shape_mask(prog.shape, cx, cy, prog.half_size, resolution, resolution)
            frames[t][mask] = np.asarray(COLORS[prog.color], dtype=np.float32)
    return frames


def generate_clip(clip_seed: int, clip_id: str, n_frames: int, resolution: int,
                  n_shapes_range: tuple[int, int] = (1, 3)) -> VideoClip:
    rng = np.random.default_rng(clip_seed)
    lo, hi = n_shapes_range
    n_shapes = int(rng.integers(lo, hi + 1))
    used: set[tuple[str, str]] = set()
    programs = [_sample_program(rng, n_frames, resolution, used) for _ in range(n_shapes)]
    return VideoClip(render_clip(programs, n_frames, resolution), clip_id, caption_for(programs))


def generate_directed_clip(clip_seed: int, clip_id: str, n_frames: int,
                           resolution: int, direction: str,
                           shape: str | None = None,
                           color: str | None = None) -> VideoClip:
    """Single-shape clip with a fixed motion direction (probe construction)."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    rng = np.random.default_rng(clip_seed)
    program = _sample_program(rng, n_frames, resolution, set(),
                              shape=shape, color=color, direction=direction)
    return VideoClip(render_clip([program], n_frames, resolution), clip_id,
                     caption_for([program]))


def generate_synthetic_corpus(n_clips: int, frames_per_clip: int, resolution: int,
                              seed: int, n_shapes_range: tuple[int, int] = (1, 3),
                              patch_size: int = 8) -> list[VideoClip]:
    """Procedurally generate a moving-shapes corpus, deterministic in seed.

    Per-clip seeds are derived from (seed, clip index), so generation is
    byte-identical regardless of call order or parallelism.
    """
    if n_clips < 1:
        raise ConfigError("n_clips must be >= 1")
    if resolution < 16 or resolution % patch_size != 0:
        raise ConfigError(
            f"resolution {resolution} must be >= 16 and divisible by patch size {patch_size}")
    if frames_per_clip < 1:
        raise ConfigError("frames_per_clip must be >= 1")
    corpus = []
    for i in range(n_clips):
        clip_rng = derived_rng(seed, f"clip/{i}")
        clip_seed = int(clip_rng.integers(0, 2**63 - 1))
        corpus.append(generate_clip(clip_seed, f"clip{i:05d}", frames_per_clip,
                                    resolution, n_shapes_range))
    return corpus


def reverse_clip(clip: VideoClip, clip_id: str | None = None) -> VideoClip:
    """Time-reverse a clip and flip the caption's direction words.

    The reversed clip contains exactly the same frames in opposite order, so
    any order-insensitive encoding of the pair is identical by construction.
    """
    words = [OPPOSITE_DIRECTION.get(w, w) for w in clip.caption.split(" ")]
    return VideoClip(
        np.ascontiguousarray(clip.frames[::-1]),
        clip_id if clip_id is not None else clip.clip_id + "-rev",
        " ".join(words),
    )


def sample_frames(clip: VideoClip, n_samples: int,
                  jitter_rng: np.random.Generator | None = None) -> SampledClip:
    """Sparsely sample frames: the midpoint of each of T equal segments.

    With jitter_rng given, a uniform position inside each segment is taken
    instead (training-time augmentation); indices stay strictly increasing.
    """
    total = clip.n_frames
    if not 1 <= n_samples <= total:
        raise ValueError(f"cannot sample {n_samples} frames from {total}")
    if jitter_rng is None:
        indices = [int((2 * i + 1) * total // (2 * n_samples)) for i in range(n_samples)]
    else:
        bounds = [(i * total // n_samples, (i + 1) * total // n_samples) for i in range(n_samples)]
        indices = [int(jitter_rng.integers(lo, max(lo + 1, hi))) for lo, hi in bounds]
    return SampledClip(clip.frames[indices], tuple(indices))


def patchify(frames: SampledClip | np.ndarray, patch_size: int) -> PatchGrid:
    """Tile each frame into non-overlapping P x P patches, row-major."""
    arr = frames.frames if isinstance(frames, SampledClip) else frames
    t, h_px, w_px, c = arr.shape
    if h_px % patch_size or w_px % patch_size:
        raise ValueError(f"frame dims {h_px}x{w_px} not divisible by patch size {patch_size}")
    h, w = h_px // patch_size, w_px // patch_size
    patches = (
        arr.reshape(t, h, patch_size, w, patch_size, c)
        .transpose(0, 1, 3, 2, 4, 5)
    )
    return PatchGrid(np.ascontiguousarray(patches))


def reassemble(grid: PatchGrid) -> np.ndarray:
    """Inverse of patchify, bit-exact."""
    t, h, w = grid.dims
    p = grid.patch_size
    return np.ascontiguousarray(
        grid.patches.transpose(0, 1, 3, 2, 4, 5).reshape(t, h * p, w * p, 3)
    )


@dataclass(frozen=True)
class ManifestEntry:
    """Lazily resolvable clip descriptor from a manifest line."""

    clip_id: str
    frames_path: Path
    caption: str

    def load(self) -> VideoClip:
        path = self.frames_path
        if path.is_dir():
            files = sorted(path.glob("*.npy"))
            if not files:
                raise DataError(f"no frame files in {path}")
            frames = np.stack([np.load(f) for f in files])
        elif path.suffix == ".npy":
            frames = np.load(path)
            if frames.ndim == 3:
                frames = frames[None]
        else:
            raise DataError(f"unsupported frames container {path}")
        return VideoClip(frames.astype(np.float32), self.clip_id, self.caption)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a tab-separated manifest: clip_id, frames_path, caption per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ManifestError(
                    line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            clip_id, frames_path, caption = fields
            if not clip_id or not frames_path or not caption:
                raise ManifestError(line_no, "empty field")
            resolved = Path(frames_path)
            if not resolved.is_absolute():
                resolved = base / resolved
            entries.append(ManifestEntry(clip_id, resolved, caption))
    return entries


def save_corpus(corpus: list[VideoClip], out_dir: str | Path) -> Path:
    """Write clips as .npy containers plus a manifest; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as fh:
        for clip in corpus:
            frames_file = f"{clip.clip_id}.npy"
            np.save(out_dir / frames_file, clip.frames)
            fh.write(f"{clip.clip_id}\t{frames_file}\t{clip.caption}\n")
    return manifest

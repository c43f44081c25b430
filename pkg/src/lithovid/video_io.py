"""Frame container I/O and stream standardization.

Raw videos live in one directory per video: binary P6 portable pixmaps
(frame_%06d.ppm) plus manifest.json, with optional P5 ground-truth masks
(0 = background, 255 = stone). Streams are standardized by temporal
resampling to 8 Hz and center-crop + bilinear resize to 256x256.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .core import FRAME_SIDE, STREAM_FPS, FrameGrid, MorphClass, StoneMask
from .errors import (
    CorruptManifest,
    DimensionMismatch,
    EmptyVideo,
    MissingFrame,
    TooSmall,
    ValidationError,
)

MANIFEST_NAME = "manifest.json"
MIN_FRAME_SIDE = 16


@dataclass(frozen=True, eq=False)
class RawVideo:
    """An ordered frame sequence prior to (or after) standardization.

    truth_masks / truth_label carry per-frame ground truth when the
    video comes from the phantom generator or an annotated container.
    """

    video_id: str
    native_fps: float
    frames: tuple[np.ndarray, ...]
    truth_masks: Optional[tuple[Optional[np.ndarray], ...]] = None
    truth_label: Optional[MorphClass] = None

    def __post_init__(self) -> None:
        if self.native_fps <= 0:
            raise ValidationError(f"native_fps must be positive, got {self.native_fps}")
        frames = tuple(self.frames)
        for i, f in enumerate(frames):
            if f.dtype != np.uint8 or f.ndim != 3 or f.shape[2] != 3:
                raise ValidationError(f"frame {i} must be HxWx3 uint8")
            if f.shape != frames[0].shape:
                raise DimensionMismatch(
                    f"frame {i} has shape {f.shape[:2]}, expected {frames[0].shape[:2]}"
                )
        object.__setattr__(self, "frames", frames)
        if self.truth_masks is not None:
            masks = tuple(self.truth_masks)
            if len(masks) != len(frames):
                raise ValidationError("truth_masks must align one-to-one with frames")
            for i, m in enumerate(masks):
                if m is not None and m.shape != frames[i].shape[:2]:
                    raise DimensionMismatch(f"truth mask {i} does not match its frame")
            object.__setattr__(self, "truth_masks", masks)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.native_fps


def resample_temporal(video: RawVideo, target_fps: float = STREAM_FPS) -> RawVideo:
    """Resample to target_fps by nearest-native-timestamp frame selection.

    Output frame k is the input frame whose timestamp is nearest to
    k/target_fps; an exact midpoint resolves to the later frame. The
    output spans the input duration within one output period. Exact
    rational arithmetic keeps the selection float-free.
    """
    if target_fps <= 0:
        raise ValidationError("target_fps must be positive")
    n = len(video.frames)
    if n == 0:
        raise EmptyVideo(f"video {video.video_id!r} has no frames")
    native = Fraction(video.native_fps)
    target = Fraction(target_fps)
    half = Fraction(1, 2)
    count = max(1, int(n * target / native + half))
    ratio = native / target
    indices = [min(n - 1, int(k * ratio + half)) for k in range(count)]
    frames = tuple(video.frames[i] for i in indices)
    masks = None
    if video.truth_masks is not None:
        masks = tuple(video.truth_masks[i] for i in indices)
    return RawVideo(
        video_id=video.video_id,
        native_fps=float(target_fps),
        frames=frames,
        truth_masks=masks,
        truth_label=video.truth_label,
    )


def _center_crop_square(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    return arr[y0 : y0 + side, x0 : x0 + side]


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with the pixel-center convention; exact at scale 1."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.floor(out + 0.5).astype(np.uint8)


def normalize_frame(img: np.ndarray, stream_index: int = 0) -> FrameGrid:
    """Center-crop to the largest centered square, then resize to 256x256."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError("normalize_frame expects an HxWx3 uint8 image")
    h, w = arr.shape[:2]
    if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
        raise TooSmall(f"frame {w}x{h} is below the {MIN_FRAME_SIDE} px minimum")
    square = _center_crop_square(arr)
    return FrameGrid(bilinear_resize(square, FRAME_SIDE, FRAME_SIDE), stream_index=stream_index)


def normalize_mask(mask: np.ndarray) -> StoneMask:
    """Apply the frame normalization geometry to a binary mask (nearest)."""
    arr = np.asarray(mask).astype(bool)
    h, w = arr.shape
    if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
        raise TooSmall(f"mask {w}x{h} is below the {MIN_FRAME_SIDE} px minimum")
    square = _center_crop_square(arr)
    side = square.shape[0]
    if side == FRAME_SIDE:
        return StoneMask(square)
    idx = np.clip(
        np.floor((np.arange(FRAME_SIDE) + 0.5) * (side / FRAME_SIDE)).astype(np.intp),
        0,
        side - 1,
    )
    return StoneMask(square[idx][:, idx])


# -- portable pixmap / graymap I/O ------------------------------------------


def write_ppm(path: Path, img: np.ndarray) -> None:
    arr = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_pgm(path: Path, mask: np.ndarray) -> None:
    bits = np.ascontiguousarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))
    h, w = bits.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bits.tobytes())


def _read_pnm(path: Path, magic: bytes, channels: int) -> np.ndarray:
    if not path.is_file():
        raise MissingFrame(f"frame file not found: {path}")
    data = path.read_bytes()
    if not data.startswith(magic):
        raise CorruptManifest(f"{path} is not a {magic.decode()} file")
    # header = magic + 3 ASCII integers separated by whitespace (comments allowed)
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise CorruptManifest(f"{path} has a malformed header") from None
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255 or w <= 0 or h <= 0:
        raise CorruptManifest(f"{path} must be 8-bit with positive dimensions")
    expected = w * h * channels
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise CorruptManifest(f"{path} raster is truncated")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, channels)


def read_ppm(path: Path) -> np.ndarray:
    return _read_pnm(Path(path), b"P6", 3)


def read_pgm(path: Path) -> np.ndarray:
    return _read_pnm(Path(path), b"P5", 1)


# -- stream container --------------------------------------------------------


def store_stream(video: RawVideo, dir_path: Path) -> Path:
    """Write a video into the frame container; round-trips bit-exactly."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, frame in enumerate(video.frames):
        name = f"frame_{i:06d}.ppm"
        write_ppm(out / name, frame)
        entry: dict = {"file": name}
        if video.truth_masks is not None and video.truth_masks[i] is not None:
            mask_name = f"mask_{i:06d}.pgm"
            write_pgm(out / mask_name, video.truth_masks[i])
            entry["truth_mask"] = mask_name
        if video.truth_label is not None:
            entry["truth_label"] = video.truth_label.tag
        entries.append(entry)
    manifest = {
        "video_id": video.video_id,
        "native_fps": video.native_fps,
        "frames": entries,
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    return manifest_path


def load_stream(manifest_path: Path) -> RawVideo:
    """Load a video from its manifest (a manifest file or its directory)."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise CorruptManifest(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptManifest(f"{path}: {exc}") from None
    try:
        video_id = manifest["video_id"]
        native_fps = float(manifest["native_fps"])
        entries = manifest["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"{path} is missing required fields ({exc})") from None
    base = path.parent
    frames: list[np.ndarray] = []
    masks: list[Optional[np.ndarray]] = []
    label: Optional[MorphClass] = None
    for i, entry in enumerate(entries):
        if "file" not in entry:
            raise CorruptManifest(f"{path}: frame entry {i} lacks a file reference")
        frame = read_ppm(base / entry["file"])
        if frames and frame.shape != frames[0].shape:
            raise DimensionMismatch(
                f"{path}: frame {i} has shape {frame.shape[:2]}, expected {frames[0].shape[:2]}"
            )
        frames.append(frame)
        if entry.get("truth_mask"):
            mask = read_pgm(base / entry["truth_mask"])
            masks.append(mask > 127)
        else:
            masks.append(None)
        if entry.get("truth_label"):
            entry_label = MorphClass.from_tag(entry["truth_label"])
            if label is not None and entry_label is not label:
                raise CorruptManifest(f"{path}: inconsistent truth labels across frames")
            label = entry_label
    truth_masks = tuple(masks) if any(m is not None for m in masks) else None
    return RawVideo(
        video_id=video_id,
        native_fps=native_fps,
        frames=tuple(frames),
        truth_masks=truth_masks,
        truth_label=label,
    )


def list_video_dirs(root: Path) -> list[Path]:
    """Video subdirectories of a cohort directory, sorted for determinism."""
    return sorted(p for p in Path(root).iterdir() if (p / MANIFEST_NAME).is_file())


def normalize_video(video: RawVideo) -> tuple[list[FrameGrid], Optional[list[Optional[StoneMask]]]]:
    """Resample to 8 Hz and normalize every frame (and truth mask) to 256x256."""
    resampled = resample_temporal(video, STREAM_FPS)
    frames = [normalize_frame(f, stream_index=k) for k, f in enumerate(resampled.frames)]
    masks: Optional[list[Optional[StoneMask]]] = None
    if resampled.truth_masks is not None:
        masks = [None if m is None else normalize_mask(m) for m in resampled.truth_masks]
    return frames, masks

"""Frame ingestion: turn a video file or a frame folder into an ordered
list of frames plus the fps the resulting track is declared at.

A frame folder is assumed to be pre-sampled; its files (sorted by name)
become the track as-is and the job's target fps is recorded as metadata.
A video file is decoded with OpenCV (optional dependency, imported
lazily) and sampled down to the target fps; if the source is already at
or below the target rate every decoded frame is kept and the source rate
is recorded instead, so the declared fps always matches the written rows.

Frames carry raw bytes: the untouched file bytes for stills, and a
shape-tagged RGB dump for decoded video frames. Backends that need
pixels decode these bytes themselves; the byte view is what keeps
hash-based backends reproducible.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import ExtractError

log = logging.getLogger("tzalx.frames")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".pgm",
                  ".webp", ".tif", ".tiff"}
_RGB_TAG = struct.Struct("<4sIII")  # b"RGB8", height, width, channels


@dataclass(frozen=True)
class Frame:
    ident: str   # file name for stills, zero-padded index for video frames
    data: bytes


def encode_rgb(arr: np.ndarray) -> bytes:
    """Deterministic byte view of a decoded H x W x 3 uint8 frame."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ExtractError(f"decoded frame must be HxWx3, got {arr.shape}")
    h, w, c = arr.shape
    return _RGB_TAG.pack(b"RGB8", h, w, c) + arr.tobytes()


def decode_rgb(data: bytes) -> np.ndarray:
    if len(data) < _RGB_TAG.size or data[:4] != b"RGB8":
        raise ExtractError("frame bytes are not a tagged RGB dump")
    _, h, w, c = _RGB_TAG.unpack_from(data, 0)
    arr = np.frombuffer(data, dtype=np.uint8, offset=_RGB_TAG.size)
    if arr.size != h * w * c:
        raise ExtractError("tagged RGB dump has wrong payload size")
    return arr.reshape(h, w, c)


def _load_frame_dir(path: Path, target_fps: float) -> tuple[list[Frame], float]:
    files = sorted(p for p in path.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ExtractError(f"{path}: no image files "
                           f"(known suffixes: {' '.join(sorted(IMAGE_SUFFIXES))})")
    return [Frame(p.name, p.read_bytes()) for p in files], target_fps


def _load_video_file(path: Path, target_fps: float) -> tuple[list[Frame], float]:
    try:
        import cv2
    except ImportError as e:
        raise ExtractError(
            f"{path}: decoding video files requires opencv-python-headless "
            f"(pip install 'tzal-extractor[video]')") from e
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ExtractError(f"{path}: cannot open video")
    src_fps = float(cap.get(cv2.CAP_PROP_FPS) or 0.0)
    if not np.isfinite(src_fps) or src_fps <= 0:
        log.warning("%s: source fps unknown, keeping every frame", path)
        src_fps = target_fps
    step = max(src_fps / target_fps, 1.0)   # never upsample
    frames: list[Frame] = []
    idx, next_pick = 0, 0.0
    while True:
        ok, bgr = cap.read()
        if not ok:
            break
        if idx >= int(round(next_pick)):
            rgb = bgr[:, :, ::-1]
            frames.append(Frame(f"{idx:06d}", encode_rgb(rgb)))
            next_pick += step
        idx += 1
    cap.release()
    if idx == 0:
        raise ExtractError(f"{path}: no decodable frames")
    return frames, (target_fps if step > 1.0 else src_fps)


def load_source(path: str | Path, target_fps: float) -> tuple[str, list[Frame], float]:
    """Resolve one job source. Returns (video id, frames, declared fps)."""
    path = Path(path)
    if path.is_dir():
        frames, fps = _load_frame_dir(path, target_fps)
    elif path.is_file():
        frames, fps = _load_video_file(path, target_fps)
    else:
        raise ExtractError(f"{path}: no such file or directory")
    vid = path.stem if path.is_file() else path.name
    if not vid:
        raise ExtractError(f"{path}: cannot derive a video id")
    return vid, frames, fps

"""Writers for the localization engine's on-disk formats.

This package talks to the engine exclusively through files, so the wire
format is restated here rather than imported. Binary feature container
(all integers little-endian):

    offset  size        field
    0       4           magic b"TZAL"
    4       4           version u32, currently 1
    8       4           num_frames N (u32)
    12      4           dim D_v (u32)
    16      4           fps (f32)
    20      4           flags (u32); bit 0 = caption block present
    24      4*N*D_v     frame embeddings, f32 row-major
    --- if flags bit 0 ---
    +0      4           caption rows (u32), must equal N
    +4      4           caption dim D_c (u32)
    +8      4*N*D_c     caption embeddings, f32 row-major

Matrix files (label texts, projections) reuse the container with fps 1.0
and no caption block. The manifest, annotation and prediction sidecars are
plain JSON. A minimal reader is included for write-then-verify fidelity
checks; the engine's own readers are the contract and are exercised
against these writers in the test suite.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TZAL"
VERSION = 1
FLAG_CAPTIONS = 0x1
_U32_MAX = 2**32 - 1
_HEADER = struct.Struct("<4sIIIfI")
_CAP_HEADER = struct.Struct("<II")


class ExtractError(Exception):
    """Unusable input data or environment (exit code 3 at the CLI)."""


def _check_block(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ExtractError(f"{what} must be (N>=1, D>=1), got {mat.shape}")
    if mat.shape[0] > _U32_MAX or mat.shape[1] > _U32_MAX:
        raise ExtractError(f"{what} dimensions overflow u32 header fields")
    if not np.isfinite(mat).all():
        raise ExtractError(f"NaN/Inf in {what}")
    return mat


def write_embedding_file(path: str | Path, frames: np.ndarray, fps: float,
                         captions: np.ndarray | None = None) -> None:
    frames = _check_block(frames, "frame block")
    if not np.isfinite(fps) or fps <= 0:
        raise ExtractError(f"fps must be positive, got {fps}")
    flags = 0
    if captions is not None:
        captions = _check_block(captions, "caption block")
        if captions.shape[0] != frames.shape[0]:
            raise ExtractError(
                f"caption rows {captions.shape[0]} != frame rows {frames.shape[0]}")
        flags |= FLAG_CAPTIONS
    blob = bytearray()
    blob += _HEADER.pack(MAGIC, VERSION, frames.shape[0], frames.shape[1],
                         float(fps), flags)
    blob += np.ascontiguousarray(frames, dtype="<f4").tobytes()
    if captions is not None:
        blob += _CAP_HEADER.pack(captions.shape[0], captions.shape[1])
        blob += np.ascontiguousarray(captions, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def write_matrix_file(mat: np.ndarray, path: str | Path) -> None:
    write_embedding_file(path, mat, fps=1.0)


def read_embedding_file(path: str | Path) -> tuple[np.ndarray, np.ndarray | None, float]:
    """Strict re-reader for fidelity verification. Returns f64 blocks."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ExtractError(f"{path}: truncated header")
    magic, version, n, d, fps, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC or version != VERSION:
        raise ExtractError(f"{path}: not a version-{VERSION} container")
    if flags & ~FLAG_CAPTIONS:
        raise ExtractError(f"{path}: unknown flag bits 0x{flags:x}")
    off = _HEADER.size
    if len(raw) < off + 4 * n * d:
        raise ExtractError(f"{path}: truncated frame payload")
    frames = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off)
    frames = frames.reshape(n, d).astype(np.float64)
    off += 4 * n * d
    captions = None
    if flags & FLAG_CAPTIONS:
        cn, cd = _CAP_HEADER.unpack_from(raw, off)
        off += _CAP_HEADER.size
        if cn != n or len(raw) < off + 4 * cn * cd:
            raise ExtractError(f"{path}: malformed caption block")
        captions = np.frombuffer(raw, dtype="<f4", count=cn * cd, offset=off)
        captions = captions.reshape(cn, cd).astype(np.float64)
        off += 4 * cn * cd
    if off != len(raw):
        raise ExtractError(f"{path}: {len(raw) - off} trailing bytes")
    return frames, captions, float(fps)


def write_manifest(path: str | Path, labels: list[str], text_file: str,
                   videos: list[tuple[str, str]],
                   projections: dict[str, str] | None = None,
                   annotations: str | None = None,
                   prompt_template: str | None = None) -> None:
    doc: dict = {"labels": list(labels), "text_file": text_file}
    if prompt_template is not None:
        doc["prompt_template"] = prompt_template
    if projections is not None:
        doc["projections"] = dict(projections)
    if annotations is not None:
        doc["annotations"] = annotations
    doc["videos"] = [{"id": vid, "feature_file": feat} for vid, feat in videos]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")

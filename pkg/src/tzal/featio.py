"""Feature container I/O: binary frame/caption embeddings plus the JSON
manifest, annotation and prediction formats understood by the engine.

Binary layout (all integers little-endian):

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

Embeddings are stored as f32 and widened to f64 on load. Loaders reject
NaN/Inf payloads instead of letting them propagate into the pipeline.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("tzal.featio")

MAGIC = b"TZAL"
VERSION = 1
FLAG_CAPTIONS = 0x1
_KNOWN_FLAGS = FLAG_CAPTIONS
_U32_MAX = 2**32 - 1
_HEADER = struct.Struct("<4sIIIfI")
_CAP_HEADER = struct.Struct("<II")

DEFAULT_PROMPT_TEMPLATE = "a video of action {CLS}"


class DataFormatError(Exception):
    """Malformed or inconsistent input data (exit code 3 at the CLI)."""


# ---------------------------------------------------------------------------
# feature tracks

@dataclass(eq=False)
class FeatureTrack:
    """Per-frame embeddings for one video, with optional caption embeddings."""

    video_id: str
    fps: float
    frames: np.ndarray                  # (N, D_v) float64
    captions: np.ndarray | None = None  # (N, D_c) float64

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.fps

    def validate(self) -> None:
        if not self.video_id:
            raise DataFormatError("empty video id")
        if not np.isfinite(self.fps) or self.fps <= 0:
            raise DataFormatError(f"{self.video_id}: fps must be positive, got {self.fps}")
        f = self.frames
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DataFormatError(f"{self.video_id}: frames must be (N>=1, D>=1), got {f.shape}")
        if not np.isfinite(f).all():
            raise DataFormatError(f"{self.video_id}: NaN/Inf in frame embeddings")
        if self.captions is not None:
            c = self.captions
            if c.ndim != 2 or c.shape[0] != f.shape[0] or c.shape[1] < 1:
                raise DataFormatError(
                    f"{self.video_id}: caption block must be (N={f.shape[0]}, D>=1), got {c.shape}")
            if not np.isfinite(c).all():
                raise DataFormatError(f"{self.video_id}: NaN/Inf in caption embeddings")


def write_feature_file(track: FeatureTrack, path: str | Path) -> None:
    track.validate()
    n, d = track.frames.shape
    if n > _U32_MAX or d > _U32_MAX:
        raise DataFormatError(f"{track.video_id}: dimensions overflow u32 header fields")
    flags = 0
    if track.captions is not None:
        if track.captions.shape[1] > _U32_MAX:
            raise DataFormatError(f"{track.video_id}: caption dim overflows u32")
        flags |= FLAG_CAPTIONS
    blob = bytearray()
    blob += _HEADER.pack(MAGIC, VERSION, n, d, float(track.fps), flags)
    blob += np.ascontiguousarray(track.frames, dtype="<f4").tobytes()
    if track.captions is not None:
        blob += _CAP_HEADER.pack(n, track.captions.shape[1])
        blob += np.ascontiguousarray(track.captions, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def read_feature_file(path: str | Path, video_id: str | None = None) -> FeatureTrack:
    """Read a binary feature file.

    The container does not store the video id; it is taken from `video_id`
    or, failing that, from the file stem. Manifest readers pass the declared id.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    vid = video_id if video_id is not None else path.stem
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, d, fps, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if flags & ~_KNOWN_FLAGS:
        raise DataFormatError(f"{path}: unknown flag bits 0x{flags:x}")
    if n < 1 or d < 1:
        raise DataFormatError(f"{path}: invalid shape ({n}, {d})")
    if not np.isfinite(fps) or fps <= 0:
        raise DataFormatError(f"{path}: invalid fps {fps}")
    off = _HEADER.size
    need = 4 * n * d
    if len(raw) < off + need:
        raise DataFormatError(f"{path}: truncated payload")
    frames = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    frames = frames.astype(np.float64)
    off += need
    captions = None
    if flags & FLAG_CAPTIONS:
        if len(raw) < off + _CAP_HEADER.size:
            raise DataFormatError(f"{path}: truncated caption header")
        cn, cd = _CAP_HEADER.unpack_from(raw, off)
        off += _CAP_HEADER.size
        if cn != n:
            raise DataFormatError(f"{path}: caption rows {cn} != frame rows {n}")
        if cd < 1:
            raise DataFormatError(f"{path}: invalid caption dim {cd}")
        need = 4 * cn * cd
        if len(raw) < off + need:
            raise DataFormatError(f"{path}: truncated caption payload")
        captions = np.frombuffer(raw, dtype="<f4", count=cn * cd, offset=off).reshape(cn, cd)
        captions = captions.astype(np.float64)
        off += need
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes")
    track = FeatureTrack(video_id=vid, fps=float(fps), frames=frames, captions=captions)
    track.validate()
    return track


def write_matrix_file(mat: np.ndarray, path: str | Path) -> None:
    """Store a generic 2-D matrix (texts, projections) in the same container.

    The fps header field carries no meaning here and is written as 1.0.
    """
    mat = np.asarray(mat, dtype=np.float64)
    write_feature_file(FeatureTrack(video_id=Path(path).stem or "matrix",
                                    fps=1.0, frames=mat), path)


def read_matrix_file(path: str | Path) -> np.ndarray:
    return read_feature_file(path).frames


# ---------------------------------------------------------------------------
# annotations

@dataclass
class Segment:
    label: str
    start_s: float
    end_s: float

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class VideoAnnotation:
    duration_s: float
    segments: list[Segment] = field(default_factory=list)


# video id -> VideoAnnotation, in file order
AnnotationSet = dict


def _check_time(value, what, path) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DataFormatError(f"{path}: {what} is not a number: {value!r}") from None
    if not np.isfinite(v):
        raise DataFormatError(f"{path}: non-finite {what}")
    return v


def read_annotations(path: str | Path) -> AnnotationSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("videos"), list):
        raise DataFormatError(f"{path}: expected a top-level {{\"videos\": [...]}} object")
    out: AnnotationSet = {}
    for entry in doc["videos"]:
        vid = entry.get("id")
        if not isinstance(vid, str) or not vid:
            raise DataFormatError(f"{path}: video entry without id")
        if vid in out:
            raise DataFormatError(f"{path}: duplicate video id {vid!r}")
        duration = _check_time(entry.get("duration"), f"{vid} duration", path)
        if duration <= 0:
            raise DataFormatError(f"{path}: {vid}: non-positive duration")
        segs = []
        for s in entry.get("segments", []):
            label = s.get("label")
            if not isinstance(label, str) or not label:
                raise DataFormatError(f"{path}: {vid}: segment without label")
            start = _check_time(s.get("start"), f"{vid} segment start", path)
            end = _check_time(s.get("end"), f"{vid} segment end", path)
            if start < 0 or end <= start:
                raise DataFormatError(
                    f"{path}: {vid}: bad segment times [{start}, {end})")
            if end > duration + 0.5:  # half-second slack for rounding at clip ends
                raise DataFormatError(
                    f"{path}: {vid}: segment end {end} exceeds duration {duration}")
            segs.append(Segment(label, start, end))
        out[vid] = VideoAnnotation(duration_s=duration, segments=segs)
    return out


def write_annotations(annotations: AnnotationSet, path: str | Path) -> None:
    doc = {"videos": [
        {"id": vid,
         "duration": ann.duration_s,
         "segments": [{"label": s.label, "start": s.start_s, "end": s.end_s}
                      for s in ann.segments]}
        for vid, ann in annotations.items()]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# predictions

@dataclass
class PredictedSegment:
    label: str
    start_s: float
    end_s: float
    score: float


# video id -> list of PredictedSegment
PredictionSet = dict


def write_predictions(preds: PredictionSet, path: str | Path,
                      config: dict | None = None) -> None:
    """Write scored proposals. Videos are serialized sorted by id so the byte
    output does not depend on manifest order or scheduling."""
    doc: dict = {}
    if config is not None:
        doc["config"] = config
    doc["videos"] = [
        {"id": vid,
         "proposals": [{"label": p.label, "start": p.start_s, "end": p.end_s,
                        "score": p.score}
                       for p in preds[vid]]}
        for vid in sorted(preds)]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_predictions(path: str | Path) -> PredictionSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("videos"), list):
        raise DataFormatError(f"{path}: expected a top-level {{\"videos\": [...]}} object")
    out: PredictionSet = {}
    for entry in doc["videos"]:
        vid = entry.get("id")
        if not isinstance(vid, str) or not vid:
            raise DataFormatError(f"{path}: video entry without id")
        if vid in out:
            raise DataFormatError(f"{path}: duplicate video id {vid!r}")
        props = []
        for p in entry.get("proposals", []):
            label = p.get("label")
            if not isinstance(label, str) or not label:
                raise DataFormatError(f"{path}: {vid}: proposal without label")
            start = _check_time(p.get("start"), f"{vid} proposal start", path)
            end = _check_time(p.get("end"), f"{vid} proposal end", path)
            score = _check_time(p.get("score"), f"{vid} proposal score", path)
            if end <= start:
                raise DataFormatError(f"{path}: {vid}: bad proposal times [{start}, {end})")
            props.append(PredictedSegment(label, start, end, score))
        out[vid] = props
    return out


# ---------------------------------------------------------------------------
# label bank and manifest

@dataclass
class LabelBank:
    """Category names, their text embeddings, and optional projection init."""

    names: list[str]
    texts: np.ndarray                # (C, D_l) float64
    proj_v: np.ndarray | None = None  # (D_v, D) initial visual projection
    proj_l: np.ndarray | None = None  # (D_l, D) initial language projection
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    @property
    def num_labels(self) -> int:
        return len(self.names)

    @property
    def text_dim(self) -> int:
        return int(self.texts.shape[1])

    def validate(self) -> None:
        if not self.names:
            raise DataFormatError("label bank has no labels")
        if len(set(self.names)) != len(self.names):
            raise DataFormatError("duplicate label names")
        if any(not n for n in self.names):
            raise DataFormatError("empty label name")
        if self.texts.ndim != 2 or self.texts.shape[0] != len(self.names):
            raise DataFormatError(
                f"text matrix rows {self.texts.shape} do not match {len(self.names)} labels")
        if not np.isfinite(self.texts).all():
            raise DataFormatError("NaN/Inf in text embeddings")
        if (self.proj_v is None) != (self.proj_l is None):
            raise DataFormatError("projections must be given for both modalities or neither")
        if self.proj_v is not None:
            if self.proj_v.ndim != 2 or self.proj_l.ndim != 2:
                raise DataFormatError("projection matrices must be 2-D")
            if self.proj_v.shape[1] != self.proj_l.shape[1]:
                raise DataFormatError(
                    f"projection output dims differ: {self.proj_v.shape} vs {self.proj_l.shape}")
            if self.proj_l.shape[0] != self.texts.shape[1]:
                raise DataFormatError(
                    f"language projection rows {self.proj_l.shape[0]} "
                    f"!= text dim {self.texts.shape[1]}")


@dataclass
class VideoRef:
    video_id: str
    feature_path: Path


@dataclass
class Manifest:
    root: Path
    bank: LabelBank
    videos: list[VideoRef]
    annotation_path: Path | None = None
    annotations: AnnotationSet | None = None

    def load_track(self, ref: VideoRef) -> FeatureTrack:
        return read_feature_file(ref.feature_path, video_id=ref.video_id)


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: manifest must be a JSON object")
    labels = doc.get("labels")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise DataFormatError(f"{path}: 'labels' must be a list of strings")
    text_file = doc.get("text_file")
    if not isinstance(text_file, str):
        raise DataFormatError(f"{path}: missing 'text_file'")
    texts = read_matrix_file(root / text_file)

    proj_v = proj_l = None
    projections = doc.get("projections")
    if projections is not None:
        if not isinstance(projections, dict) or \
                not {"proj_v", "proj_l"} <= set(projections):
            raise DataFormatError(f"{path}: 'projections' needs both proj_v and proj_l")
        proj_v = read_matrix_file(root / projections["proj_v"])
        proj_l = read_matrix_file(root / projections["proj_l"])

    bank = LabelBank(names=list(labels), texts=texts, proj_v=proj_v, proj_l=proj_l,
                     prompt_template=doc.get("prompt_template", DEFAULT_PROMPT_TEMPLATE))
    bank.validate()

    entries = doc.get("videos")
    if not isinstance(entries, list) or not entries:
        raise DataFormatError(f"{path}: 'videos' must be a non-empty list")
    videos, seen = [], set()
    for entry in entries:
        vid = entry.get("id") if isinstance(entry, dict) else None
        feat = entry.get("feature_file") if isinstance(entry, dict) else None
        if not isinstance(vid, str) or not vid or not isinstance(feat, str):
            raise DataFormatError(f"{path}: each video entry needs 'id' and 'feature_file'")
        if vid in seen:
            raise DataFormatError(f"{path}: duplicate video id {vid!r}")
        seen.add(vid)
        fpath = root / feat
        if not fpath.is_file():
            raise DataFormatError(f"{path}: feature file not found: {fpath}")
        videos.append(VideoRef(video_id=vid, feature_path=fpath))

    annotation_path = annotations = None
    if doc.get("annotations") is not None:
        annotation_path = root / doc["annotations"]
        annotations = read_annotations(annotation_path)
        known = set(bank.names)
        for vid, ann in annotations.items():
            for seg in ann.segments:
                if seg.label not in known:
                    raise DataFormatError(
                        f"{annotation_path}: {vid}: unknown label {seg.label!r}")
            if vid not in seen:
                log.warning("annotations mention %s which is not in the manifest", vid)

    return Manifest(root=root, bank=bank, videos=videos,
                    annotation_path=annotation_path, annotations=annotations)


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

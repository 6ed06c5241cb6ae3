"""Job orchestration: embed labels and frames, caption frames, and write a
complete engine-readable dataset directory.

Output layout under the job's out_dir:

    manifest.json            labels, text matrix, projections, video list
    labels.tzal              (C, D_l) pre-projection label text embeddings
    proj_v.tzal, proj_l.tzal backend projection heads into the joint space
    features/<vid>.tzal      per-video frame embeddings (+ caption block)
    extract_summary.json     backend spec, dims, per-video stats, failures

Caption generation is allowed to fail per frame: the failing index is
logged and recorded in the summary and its row is written as zeros, so
one bad frame never sinks a video. With fidelity enabled every written
container is immediately re-read and compared against the in-memory
payload (after the f32 round-trip), catching truncated or corrupt writes
at the source.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import container
from .backends import load_backend
from .container import ExtractError
from .frames import Frame, load_source
from .jobs import ExtractJob, check_labels, format_prompt

log = logging.getLogger("tzalx.export")


def _require_width(mat: np.ndarray, width: int, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != width:
        raise ExtractError(
            f"{what} width {mat.shape} does not match the declared dim {width}")
    return mat


def embed_labels(backend, labels: list[str], template: str) -> np.ndarray:
    labels = check_labels(labels)
    prompts = [format_prompt(template, name) for name in labels]
    return _require_width(backend.embed_texts(prompts), backend.language_dim,
                          "label text matrix")


def caption_frames(backend, frames: list[Frame],
                   video_id: str) -> tuple[np.ndarray, list[int]]:
    """Caption every frame and embed the texts. Returns the (N, D_l) caption
    block and the indices whose generation failed (rows zero-filled)."""
    texts, good, failed = [], [], []
    for i, frame in enumerate(frames):
        try:
            texts.append(backend.caption_frame(frame))
            good.append(i)
        except Exception as e:  # a bad frame must not sink the video
            log.warning("%s: caption generation failed for frame %d (%s): %s",
                        video_id, i, frame.ident, e)
            failed.append(i)
    block = np.zeros((len(frames), backend.language_dim))
    if good:
        block[good] = _require_width(backend.embed_texts(texts),
                                     backend.language_dim, "caption block")
    return block, failed


def _verify_file(path: Path, frames: np.ndarray, fps: float,
                 captions: np.ndarray | None) -> None:
    got_frames, got_caps, got_fps = container.read_embedding_file(path)
    want = np.asarray(frames).astype("<f4").astype(np.float64)
    if got_frames.shape != want.shape or not np.array_equal(got_frames, want):
        raise ExtractError(f"{path}: frame payload does not survive re-reading")
    if got_fps != float(np.float32(fps)):
        raise ExtractError(f"{path}: fps field does not survive re-reading")
    if (captions is None) != (got_caps is None):
        raise ExtractError(f"{path}: caption block presence flipped")
    if captions is not None:
        want = np.asarray(captions).astype("<f4").astype(np.float64)
        if got_caps.shape != want.shape or not np.array_equal(got_caps, want):
            raise ExtractError(f"{path}: caption payload does not survive re-reading")


def _write_checked(job: ExtractJob, path: Path, frames: np.ndarray, fps: float,
                   captions: np.ndarray | None = None) -> None:
    container.write_embedding_file(path, frames, fps, captions)
    if job.fidelity:
        _verify_file(path, frames, fps, captions)


def export_video(backend, job: ExtractJob, source: Path) -> tuple[str, str, dict]:
    video_id, frames, fps = load_source(source, job.fps)
    emb = _require_width(backend.embed_frames(frames), backend.vision_dim,
                         f"{video_id} frame embeddings")
    captions, failed = (None, [])
    if job.captions:
        captions, failed = caption_frames(backend, frames, video_id)
    rel = f"features/{video_id}.tzal"
    _write_checked(job, job.out_dir / rel, emb, fps, captions)
    log.info("%s: %d frames at %.3g fps -> %s", video_id, len(frames), fps, rel)
    entry = {"id": video_id, "frames": len(frames), "fps": fps,
             "caption_failures": failed}
    return video_id, rel, entry


def run_job(job: ExtractJob, labels: list[str]) -> dict:
    job.validate()
    # fail before any checkpoint load when captions are requested but no
    # captioner can exist for the chosen model
    if job.captions and job.captioner is None and not job.model.startswith("hash"):
        raise ExtractError(
            f"model {job.model!r} cannot caption; add --captioner blip:<id> "
            f"or pass --no-captions")
    backend = load_backend(job.model, job.captioner)
    if job.captions and not backend.has_captioner:
        raise ExtractError(
            f"model {job.model!r} cannot caption; add --captioner blip:<id> "
            f"or pass --no-captions")
    job.out_dir.mkdir(parents=True, exist_ok=True)
    (job.out_dir / "features").mkdir(exist_ok=True)

    texts = embed_labels(backend, labels, job.prompt_template)
    proj_v, proj_l = backend.projections()
    proj_v = _require_width(proj_v, backend.embed_dim, "visual projection")
    proj_l = _require_width(proj_l, backend.embed_dim, "language projection")
    if proj_v.shape[0] != backend.vision_dim or proj_l.shape[0] != backend.language_dim:
        raise ExtractError("projection rows do not match the declared encoder dims")
    _write_checked(job, job.out_dir / "labels.tzal", texts, 1.0)
    _write_checked(job, job.out_dir / "proj_v.tzal", proj_v, 1.0)
    _write_checked(job, job.out_dir / "proj_l.tzal", proj_l, 1.0)

    videos, entries = [], []
    for source in job.sources:
        video_id, rel, entry = export_video(backend, job, source)
        videos.append((video_id, rel))
        entries.append(entry)

    container.write_manifest(
        job.out_dir / "manifest.json",
        labels=labels, text_file="labels.tzal", videos=videos,
        projections={"proj_v": "proj_v.tzal", "proj_l": "proj_l.tzal"},
        prompt_template=job.prompt_template)

    summary = {"backend": backend.spec,
               "vision_dim": backend.vision_dim,
               "language_dim": backend.language_dim,
               "embed_dim": backend.embed_dim,
               "prompt_template": job.prompt_template,
               "labels": len(labels),
               "captions": bool(job.captions),
               "videos": entries}
    (job.out_dir / "extract_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    return summary

"""Synthetic benchmark generator.

Plants labeled action segments inside feature tracks: category texts are
orthonormal random unit vectors, action frames are the category text plus
Gaussian noise (renormalized), background frames are random unit vectors or,
in near-miss mode, a same-category distractor direction whose prominence is
shaped so that the "shoulders" flanking each segment score close to the
foreground threshold. Caption embeddings mirror the frame semantics with
their own noise. Everything is written in the self-contained manifest layout
and is bit-reproducible from the seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .featio import (DataFormatError, FeatureTrack, Segment, VideoAnnotation,
                     write_annotations, write_feature_file, write_manifest,
                     write_matrix_file)
from .numcore import NumericError

log = logging.getLogger("tzal.synth")

BACKGROUND_MODES = ("random", "near-miss")


@dataclass
class SynthSpec:
    videos: int = 50
    frames: int = 200
    dim: int = 64
    categories: int = 10
    segments_min: int = 1
    segments_max: int = 3
    segment_len_min: int = 25
    segment_len_max: int = 180
    fps: float = 5.0
    noise_sigma: float = 0.1
    caption_noise_sigma: float = 0.1
    # temporal correlation of the feature noise (AR(1) coefficient); the
    # per-frame marginal stays Gaussian(0, sigma^2). Real encoder features are
    # smooth in time, and smooth noise keeps per-step sample re-draws from
    # drowning the adaptation signal.
    noise_phi: float = 0.9999
    background: str = "near-miss"
    # near-miss shape. The distractor direction has cosine `mix` against the
    # video's category text. Each segment grows a flat "shoulder" whose score
    # sits a margin (drawn from [margin_lo, margin_hi]) away from the video's
    # estimated foreground threshold, then ramps down to a low floor.
    near_miss_mix: float = 0.8
    near_miss_margin_lo: float = -0.002
    near_miss_margin_hi: float = 0.003
    near_miss_shoulder_min: int = 16
    near_miss_shoulder_max: int = 36
    near_miss_ramp: int = 4
    near_miss_floor: float = 0.18
    seed: int = 0

    def validate(self) -> None:
        if self.videos < 1 or self.frames < 1:
            raise DataFormatError("need at least one video and one frame")
        if self.dim < 1:
            raise DataFormatError("dim must be >= 1")
        if not 1 <= self.categories <= self.dim:
            raise DataFormatError(
                f"categories must be in [1, dim]: {self.categories} vs dim {self.dim}")
        if not 1 <= self.segments_min <= self.segments_max:
            raise DataFormatError("bad segment count range")
        if not 1 <= self.segment_len_min <= self.segment_len_max:
            raise DataFormatError("bad segment length range")
        # room for the largest requested count at minimum length plus gaps,
        # so the planner never has to drop below segments_min
        if self.frames < self.segments_max * self.segment_len_min + self.segments_max - 1:
            raise DataFormatError(
                f"{self.frames} frames cannot hold {self.segments_max} segments "
                f"of at least {self.segment_len_min} frames")
        if self.fps <= 0 or not np.isfinite(self.fps):
            raise DataFormatError("fps must be positive")
        if self.noise_sigma < 0 or self.caption_noise_sigma < 0:
            raise DataFormatError("noise sigmas must be >= 0")
        if not 0.0 <= self.noise_phi < 1.0:
            raise DataFormatError("noise_phi must be in [0, 1)")
        if self.background not in BACKGROUND_MODES:
            raise DataFormatError(
                f"background must be one of {BACKGROUND_MODES}, got {self.background!r}")
        if not 0.0 < self.near_miss_mix < 1.0:
            raise DataFormatError("near_miss_mix must be in (0, 1)")
        if self.near_miss_margin_lo > self.near_miss_margin_hi:
            raise DataFormatError("bad near-miss margin range")
        if not 1 <= self.near_miss_shoulder_min <= self.near_miss_shoulder_max:
            raise DataFormatError("bad near-miss shoulder range")
        if self.near_miss_ramp < 1:
            raise DataFormatError("near_miss_ramp must be >= 1")
        if not 0.0 < self.near_miss_floor < 1.0:
            raise DataFormatError("near_miss_floor must be in (0, 1)")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as e:
            raise DataFormatError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: invalid JSON: {e}") from e
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise DataFormatError(f"{path}: unknown spec fields {sorted(unknown)}")
        spec = cls(**doc)
        spec.validate()
        return spec

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


def describe(spec: SynthSpec) -> dict:
    """Closed-form expectations under unconstrained draws (the planner clamps
    lengths when a video runs out of room, which pulls the realized fraction
    slightly below this for crowded settings)."""
    mean_segments = 0.5 * (spec.segments_min + spec.segments_max)
    mean_len = 0.5 * (spec.segment_len_min + spec.segment_len_max)
    return {
        "videos": spec.videos,
        "frames_per_video": spec.frames,
        "categories": spec.categories,
        "duration_s": spec.frames / spec.fps,
        "expected_segments_per_video": mean_segments,
        "expected_foreground_fraction": min(1.0, mean_segments * mean_len / spec.frames),
    }


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthonormal_texts(rng: np.random.Generator, c: int, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, c)))
    # fix signs so the construction is unambiguous
    return (q * np.sign(np.diag(r))).T.copy()


def _draw_span(rng: np.random.Generator, lo_len: int, hi_len: int,
               n: int) -> tuple[int, int]:
    length = int(rng.integers(lo_len, hi_len + 1))
    start = int(rng.integers(0, n - length + 1))
    return start, start + length - 1


def _plan_segments(rng: np.random.Generator, spec: SynthSpec) -> list[tuple[int, int]]:
    """Choose non-overlapping [first, last] frame spans. Multi-segment videos
    straddle the quarter boundaries of the timeline so that action appears in
    every quarter; single-segment videos get one long span. Both layouts keep
    the per-step sample bins populated with action frames, which the
    adaptation loop needs to see a stable signal."""
    n = spec.frames
    want = int(rng.integers(spec.segments_min, spec.segments_max + 1))
    lo, hi = spec.segment_len_min, spec.segment_len_max

    if want == 1:
        span_hi = min(hi, max(1, n - 8))
        span_lo = min(max(lo, min(span_hi, (3 * n) // 4 + 5)), span_hi)
        return [_draw_span(rng, span_lo, span_hi, n)]

    # anchor one segment across each chosen quarter boundary; reaches are
    # sized so segments stay within the length range and gaps keep room for
    # background floor between the shoulders
    anchors = [n // 4, (3 * n) // 4] if want == 2 else [n // 4, n // 2, (3 * n) // 4]
    min_gap = spec.near_miss_ramp + 2
    quarter = n // 4
    if want == 2:
        reach_lo, reach_hi = max(quarter // 2 - 10, 5), max(quarter // 2 + 2, 10)
    else:
        reach_lo, reach_hi = max(quarter // 2 - 12, 5), max(quarter // 2 - 6, 7)
    reach_lo = min(reach_lo, reach_hi)
    spans = []
    prev_end = -min_gap - 1
    for b in anchors:
        left = int(rng.integers(reach_lo, reach_hi + 1))
        right = int(rng.integers(reach_lo, reach_hi + 1))
        first = max(b - left, prev_end + min_gap + 1, 0)
        last = min(b + right, n - 1)
        spans.append((first, last))
        prev_end = last
    return spans


def _ar1_noise(rng: np.random.Generator, n: int, d: int, phi: float) -> np.ndarray:
    """Stationary AR(1) rows: every frame is marginally N(0, 1) per coordinate,
    adjacent frames correlate by phi."""
    eps = rng.standard_normal((n, d))
    if phi <= 0.0:
        return eps
    out = np.empty_like(eps)
    out[0] = eps[0]
    c = np.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + c * eps[i]
    return out


_SMOOTH_WINDOW = 5    # the moving-average width the margins are calibrated to


def _box_smooth(x: np.ndarray, window: int = _SMOOTH_WINDOW) -> np.ndarray:
    half = window // 2
    n = len(x)
    out = np.empty_like(x)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = x[lo:hi].mean()
    return out


def _layout_background(rng: np.random.Generator, spec: SynthSpec,
                       action: np.ndarray) -> tuple[list, list, np.ndarray]:
    """Partition background frames into flat shoulders attached to segment
    edges, short ramps, and floor. Returns (shoulders, ramps, floor_mask)
    where shoulders and ramps are lists of (frame_indices, margin)."""
    n = spec.frames
    shoulders, ramps = [], []
    occupied = action.copy()

    def grow(edge: int, step: int):
        margin = float(rng.uniform(spec.near_miss_margin_lo, spec.near_miss_margin_hi))
        length = int(rng.integers(spec.near_miss_shoulder_min,
                                  spec.near_miss_shoulder_max + 1))
        free = 0
        i = edge + step
        while 0 <= i < n and not occupied[i]:
            free += 1
            i += step
        # keep a floor stretch at the far end of every free run so the
        # foreground threshold stays anchored below the shoulders
        budget = free - max(4, free // 3)
        length = max(0, min(length, budget - spec.near_miss_ramp))
        ramp_len = max(0, min(spec.near_miss_ramp, budget - length))
        i = edge + step
        sh = [i + step * j for j in range(length)]
        rp = [i + step * (length + j) for j in range(ramp_len)]
        for j in sh + rp:
            occupied[j] = True
        if sh:
            shoulders.append((sh, margin))
        if rp:
            ramps.append((rp, margin))

    first_last = []
    idx = np.nonzero(action)[0]
    if len(idx):
        brk = np.nonzero(np.diff(idx) > 1)[0]
        starts = np.concatenate(([idx[0]], idx[brk + 1]))
        ends = np.concatenate((idx[brk], [idx[-1]]))
        first_last = list(zip(starts, ends))
    for first, last in first_last:
        grow(int(first), -1)
        grow(int(last), +1)
    return shoulders, ramps, ~occupied


def _solve_weight(target: float, dt: float, gi_t: float, d_gi: float,
                  gi_sq: float, sigma: float) -> float:
    """Root of cos((w*d + sigma*g) . t) = target in w, by bisection. The
    cosine rises from the pure-noise value at w=0 toward d.t as w grows, so
    a sign change brackets the root; out-of-range targets clamp."""
    def f(w: float) -> float:
        num = w * dt + sigma * gi_t
        den = np.sqrt(w * w + 2.0 * w * sigma * d_gi + sigma * sigma * gi_sq)
        return num / den - target

    lo, hi = 1e-4, 64.0
    flo, fhi = f(lo), f(hi)
    if flo >= 0.0:
        return lo
    if fhi <= 0.0:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _calibrated_background(spec: SynthSpec, text: np.ndarray, distractor: np.ndarray,
                           action: np.ndarray, act_scores: np.ndarray,
                           noise: np.ndarray, shoulders: list, ramps: list,
                           floor_mask: np.ndarray) -> np.ndarray:
    """Background prominence per frame, calibrated so each shoulder's frame
    score lands exactly its margin away from the realized foreground
    threshold (the mean smoothed score). The threshold depends on the
    background itself, so iterate the linear fixpoint a few times."""
    n = spec.frames
    sigma = spec.noise_sigma
    n_fl = int(floor_mask.sum())
    act_sum = float(act_scores.sum())

    # start from a crude threshold guess below the weakest segment
    idx = np.nonzero(action)[0]
    brk = np.nonzero(np.diff(idx) > 1)[0]
    seg_slices = np.split(idx, brk + 1)
    seg_lo = min(float(act_scores[s].mean() - 2.0 * act_scores[s].std())
                 for s in seg_slices)
    gamma = float(np.clip(seg_lo - 0.035, 0.30, 0.74))

    targets = np.zeros(n)
    w = np.zeros(n)
    dt = float(distractor @ text)
    gi_t = noise @ text
    d_gi = noise @ distractor
    gi_sq = np.einsum("ij,ij->i", noise, noise)

    for _ in range(6):
        # floor level balancing the mean to gamma, with ramps tied linearly
        # between their shoulder level and the floor
        sh_sum = sum(len(sh) * (gamma + m) for sh, m in shoulders)
        c1 = c2 = 0.0
        for rp, m in ramps:
            for k in range(len(rp)):
                frac = (k + 1.0) / (len(rp) + 1.0)
                c1 += frac
                c2 += (1.0 - frac) * (gamma + m)
        floor = (n * gamma - act_sum - sh_sum - c2) / max(n_fl + c1, 1.0)
        floor = float(np.clip(floor, 0.04, max(gamma - 0.10, 0.05)))

        targets[floor_mask] = floor
        for sh, m in shoulders:
            targets[sh] = gamma + m
        for rp, m in ramps:
            for k, i in enumerate(rp):
                frac = (k + 1.0) / (len(rp) + 1.0)
                targets[i] = (gamma + m) * (1.0 - frac) + floor * frac

        scores = act_scores.copy()
        for i in np.nonzero(~action)[0]:
            w[i] = _solve_weight(targets[i], dt, float(gi_t[i]), float(d_gi[i]),
                                 float(gi_sq[i]), sigma)
            num = w[i] * dt + sigma * gi_t[i]
            den = np.sqrt(w[i] ** 2 + 2.0 * w[i] * sigma * d_gi[i]
                          + sigma * sigma * gi_sq[i])
            scores[i] = num / den
        # re-anchor so margins are exact against the realized mean
        gamma_real = float(_box_smooth(scores).mean())
        if abs(gamma_real - gamma) < 1e-9:
            break
        gamma = gamma_real
    return w


def generate(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write the dataset under out_dir; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    texts = _orthonormal_texts(rng, spec.categories, spec.dim)
    names = [f"cat{idx:02d}" for idx in range(spec.categories)]
    write_matrix_file(texts, out / "texts.tzal")

    annotations: dict[str, VideoAnnotation] = {}
    videos = []
    for v in range(spec.videos):
        vid = f"vid{v:04d}"
        vrng = np.random.default_rng((spec.seed, v))
        cat = int(vrng.integers(spec.categories))
        text = texts[cat]
        spans = _plan_segments(vrng, spec)
        n, d = spec.frames, spec.dim

        action = np.zeros(n, dtype=bool)
        for first, last in spans:
            action[first:last + 1] = True

        noise = _ar1_noise(vrng, n, d, spec.noise_phi)
        cap_noise = _ar1_noise(vrng, n, d, spec.noise_phi)
        base = np.empty((n, d))
        cap_base = np.empty((n, d))
        base[action] = text
        # captions echo the category only loosely (cosine ~0.5); verbatim
        # copies of the text would mark every true segment caption-redundant
        # and the suppression stage would drop it
        cap_echo = 0.5 * text + np.sqrt(0.75) * _unit_orthogonal(vrng, text)
        cap_base[action] = cap_echo
        if spec.background == "near-miss":
            r = _unit_orthogonal(vrng, text)
            distractor = spec.near_miss_mix * text + \
                np.sqrt(1.0 - spec.near_miss_mix ** 2) * r
            cap_distractor = _unit(vrng.standard_normal(d))
            gi_t = noise @ text
            gi_sq = np.einsum("ij,ij->i", noise, noise)
            act_scores = np.zeros(n)
            act_scores[action] = (
                (1.0 + spec.noise_sigma * gi_t[action])
                / np.sqrt(1.0 + 2.0 * spec.noise_sigma * gi_t[action]
                          + spec.noise_sigma ** 2 * gi_sq[action]))
            shoulders, ramps, floor_mask = _layout_background(vrng, spec, action)
            w = _calibrated_background(spec, text, distractor, action, act_scores,
                                       noise, shoulders, ramps, floor_mask)
            bg = ~action
            base[bg] = w[bg, None] * distractor
            cap_base[bg] = w[bg, None] * cap_distractor
        else:
            bg = ~action
            nb = int(bg.sum())
            base[bg] = _renorm(vrng.standard_normal((nb, d)))
            cap_base[bg] = _renorm(vrng.standard_normal((nb, d)))

        frames = _renorm(base + spec.noise_sigma * noise)
        caps = _renorm(cap_base + spec.caption_noise_sigma * cap_noise)

        track = FeatureTrack(video_id=vid, fps=spec.fps, frames=frames, captions=caps)
        feat_rel = f"features/{vid}.tzal"
        write_feature_file(track, out / feat_rel)
        videos.append((vid, feat_rel))
        annotations[vid] = VideoAnnotation(
            duration_s=n / spec.fps,
            segments=[Segment(label=names[cat], start_s=first / spec.fps,
                              end_s=(last + 1) / spec.fps)
                      for first, last in spans])

    write_annotations(annotations, out / "annotations.json")
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, labels=names, text_file="texts.tzal",
                   videos=videos, annotations="annotations.json")
    spec.to_json(out / "synth_spec.json")
    log.info("wrote %d videos to %s", spec.videos, out)
    return manifest_path


def _renorm(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise NumericError("degenerate zero-norm synthetic frame")
    return rows / norms


def _unit_orthogonal(rng: np.random.Generator, anchor: np.ndarray) -> np.ndarray:
    for _ in range(16):
        cand = rng.standard_normal(len(anchor))
        cand = cand - (cand @ anchor) * anchor
        norm = np.linalg.norm(cand)
        if norm > 1e-9:
            return cand / norm
    raise NumericError("could not draw a direction orthogonal to the anchor")

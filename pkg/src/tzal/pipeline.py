"""Per-video test-time adaptation pipeline.

For each video: pick a pseudo-label from the video-level mean embedding,
optionally subtract the pseudo-label text from the projected frames, run a
short self-supervised adaptation of the projection parameters, then threshold
the smoothed frame scores at their mean, group the surviving frames into
proposals, re-label them, and prune incoherent ones with caption similarity.
Parameters are discarded after every video; nothing persists across videos.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .featio import (DataFormatError, FeatureTrack, LabelBank, Manifest,
                     PredictedSegment, VideoAnnotation)
from .numcore import (AdapterState, LossBreakdown, NumericError, adam_step,
                      logistic, loss_and_grad, softmax)

log = logging.getLogger("tzal.pipeline")

_NORM_FLOOR = 1e-12
_DEAD_NORM = 1e-9          # projected norm below which a subtracted frame is unusable
_IMPROVE_EPS = 1e-12       # strict loss improvement margin for early stopping
_JITTER_RETRIES = 8


@dataclass
class RunConfig:
    steps: int = 50
    k: int = 4
    lr: float = 1e-5
    alpha: float = 0.5
    beta: float = 0.75
    jitter: int | None = None      # None = 5% of the bin width, at least 1
    window: int = 5
    patience: int = 5
    subtract_pseudo_label: bool = False
    tau_sigmoid: bool = False
    oracle_class: bool = False
    oracle_count: bool = False
    oracle_selection: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not -1.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [-1, 1], got {self.beta}")
        if self.jitter is not None and self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.oracle_class + self.oracle_count + self.oracle_selection > 1:
            raise ValueError("oracle flags are mutually exclusive")

    def needs_annotations(self) -> bool:
        return self.oracle_class or self.oracle_count or self.oracle_selection


@dataclass
class PseudoLabel:
    label_index: int
    similarity: float
    mean_embedding: np.ndarray     # projected video-level mean, (D,)


@dataclass
class VideoView:
    """A track plus the constant offset applied to projected frames by
    background subtraction. dead_mask flags frames the subtraction annihilated;
    they score 0 and never become positive candidates."""

    track: FeatureTrack
    offset: np.ndarray | None = None
    dead_mask: np.ndarray | None = None

    def projected_frames(self, state: AdapterState) -> np.ndarray:
        z = self.track.frames @ state.w_v
        if self.offset is not None:
            z = z - self.offset
        return z


@dataclass
class SampleSets:
    pos_indices: np.ndarray
    neg_indices: np.ndarray
    pos_scores: np.ndarray
    neg_scores: np.ndarray

    @property
    def k(self) -> int:
        return len(self.pos_indices)


@dataclass
class Proposal:
    label_index: int
    start_s: float
    end_s: float
    score: float
    first_frame: int
    last_frame: int


@dataclass
class AdaptResult:
    state: AdapterState
    trace: list[LossBreakdown]
    best_step: int
    stopped_early: bool


def video_rng(seed: int, video_id: str) -> np.random.Generator:
    """Global seed XOR a stable 64-bit hash of the id; isolates videos from
    each other and from iteration order."""
    h = int.from_bytes(hashlib.blake2b(video_id.encode("utf-8"),
                                       digest_size=8).digest(), "little")
    return np.random.default_rng((seed ^ h) & 0xFFFFFFFFFFFFFFFF)


def make_initial_state(bank: LabelBank, frame_dim: int, tau: float = 1.0) -> AdapterState:
    """Fidelity mode uses the manifest's projection matrices; self-contained
    manifests get identity projections, which requires both embedding sides to
    share one dimension."""
    if bank.proj_v is not None:
        if bank.proj_v.shape[0] != frame_dim:
            raise DataFormatError(
                f"visual projection expects dim {bank.proj_v.shape[0]}, "
                f"features have {frame_dim}")
        return AdapterState.initial(bank.proj_v, bank.proj_l, tau)
    if frame_dim != bank.text_dim:
        raise DataFormatError(
            f"self-contained manifest needs matching dims, got frames "
            f"{frame_dim} vs texts {bank.text_dim} (or supply projections)")
    return AdapterState.identity(frame_dim, tau)


def pseudo_label(track: FeatureTrack, bank: LabelBank, state: AdapterState) -> PseudoLabel:
    """Video-level class guess: cosine between the projected mean frame and
    each projected text, argmax with ties to the lowest index. Uses the
    initial, unadapted state."""
    mean_z = track.frames.mean(axis=0) @ state.w_v
    nz = np.linalg.norm(mean_z)
    if nz < _NORM_FLOOR:
        raise NumericError(f"{track.video_id}: zero-norm video-level embedding")
    u = bank.texts @ state.w_l
    nu = np.linalg.norm(u, axis=1)
    if (nu < _NORM_FLOOR).any():
        bad = int(np.argmin(nu))
        raise NumericError(f"zero-norm projected text for label {bank.names[bad]!r}")
    sims = (u @ mean_z) / (nu * nz)
    idx = int(np.argmax(sims))
    return PseudoLabel(label_index=idx, similarity=float(sims[idx]), mean_embedding=mean_z)


def subtract_background(track: FeatureTrack, pseudo: PseudoLabel, bank: LabelBank,
                        state: AdapterState) -> VideoView:
    """Remove the pseudo-label direction from every projected frame. The
    subtracted text vector is fixed at the current state; later gradient steps
    flow through the frame projection only."""
    offset = bank.texts[pseudo.label_index] @ state.w_l
    z = track.frames @ state.w_v - offset
    dead = np.linalg.norm(z, axis=1) < _DEAD_NORM
    if dead.any():
        log.warning("%s: background subtraction annihilated %d frame(s)",
                    track.video_id, int(dead.sum()))
    return VideoView(track=track, offset=offset, dead_mask=dead if dead.any() else None)


def frame_scores(view: VideoView, text: np.ndarray, state: AdapterState,
                 tau_sigmoid: bool = False) -> np.ndarray:
    """Per-frame score tau * cos(projected frame, projected text); annihilated
    frames score 0. With tau_sigmoid the score is logistic(tau * cos)."""
    z = view.projected_frames(state)
    u = np.asarray(text, dtype=np.float64) @ state.w_l
    nu = np.linalg.norm(u)
    if nu < _NORM_FLOOR:
        raise NumericError(f"{view.track.video_id}: zero-norm projected text")
    nz = np.linalg.norm(z, axis=1)
    dead = view.dead_mask if view.dead_mask is not None \
        else np.zeros(len(nz), dtype=bool)
    bad = (nz < _NORM_FLOOR) & ~dead
    if bad.any():
        raise NumericError(
            f"{view.track.video_id}: zero-norm projection at frame {int(np.argmax(bad))}")
    cos = np.zeros(len(nz))
    live = ~dead
    cos[live] = (z[live] @ u) / (nz[live] * nu)
    scores = logistic(state.tau * cos) if tau_sigmoid else state.tau * cos
    scores[dead] = 0.0
    return scores


def resolve_jitter(config: RunConfig, n: int, k_eff: int) -> int:
    if config.jitter is not None:
        return config.jitter
    return max(1, int(0.05 * n / k_eff))


def select_samples(scores: np.ndarray, k: int, jitter: int,
                   rng: np.random.Generator,
                   pos_mask: np.ndarray | None = None) -> SampleSets:
    """Split the timeline into k equal bins; per bin take the argmax frame as
    positive and the argmin as negative, then perturb each pick by a uniform
    integer in [-jitter, jitter] clamped to its bin. Collisions re-draw, then
    fall back to the nearest free in-bin index. If the perturbation inverted a
    bin's ordering the two picks swap roles, so among admissible picks the
    positive set always keeps the higher mean score.

    pos_mask, when given, marks frames eligible as positives (used to keep
    annihilated frames out of the positive set).
    """
    n = len(scores)
    if n < 2:
        raise DataFormatError(f"need at least 2 frames to select samples, got {n}")
    k_eff = min(k, n // 2)
    if k_eff < k:
        log.warning("clamping K from %d to %d for %d frames", k, k_eff, n)
    edges = (np.arange(k_eff + 1) * n) // k_eff
    pos_idx, neg_idx = [], []

    def jittered(base, lo, hi, reject):
        if jitter > 0:
            for _ in range(_JITTER_RETRIES):
                cand = int(np.clip(base + rng.integers(-jitter, jitter + 1), lo, hi - 1))
                if not reject(cand):
                    return cand
        if not reject(base):
            return base
        # walk outward for the nearest acceptable in-bin index
        for dist in range(1, hi - lo):
            for cand in (base - dist, base + dist):
                if lo <= cand < hi and not reject(cand):
                    return cand
        raise DataFormatError("no admissible sample index in bin")  # bin size >= 2

    for b in range(k_eff):
        lo, hi = int(edges[b]), int(edges[b + 1])
        chunk = scores[lo:hi]
        if pos_mask is not None:
            allowed = pos_mask[lo:hi]
            if allowed.any():
                masked = np.where(allowed, chunk, -np.inf)
                p_base = lo + int(np.argmax(masked))
                p_reject = lambda c: not pos_mask[c]
            else:
                p_base = lo + int(np.argmax(chunk))
                p_reject = lambda c: False
        else:
            p_base = lo + int(np.argmax(chunk))
            p_reject = lambda c: False
        p = jittered(p_base, lo, hi, p_reject)
        n_base = lo + int(np.argmin(chunk))
        neg = jittered(n_base, lo, hi, lambda c: c == p)
        # keep ineligible frames (e.g. annihilated ones) out of the positives
        if scores[p] < scores[neg] and (pos_mask is None or pos_mask[neg]):
            p, neg = neg, p
        pos_idx.append(p)
        neg_idx.append(neg)

    pos_idx = np.asarray(pos_idx, dtype=np.int64)
    neg_idx = np.asarray(neg_idx, dtype=np.int64)
    return SampleSets(pos_indices=pos_idx, neg_indices=neg_idx,
                      pos_scores=scores[pos_idx], neg_scores=scores[neg_idx])


def oracle_selection_sets(scores: np.ndarray, gt_mask: np.ndarray, k: int,
                          rng: np.random.Generator) -> SampleSets:
    """Selection with ground-truth support: positives drawn uniformly from
    frames inside annotated segments, negatives from outside."""
    n = len(scores)
    inside = np.nonzero(gt_mask)[0]
    outside = np.nonzero(~gt_mask)[0]
    k_eff = min(k, n // 2, len(inside), len(outside))
    if k_eff < 1:
        raise DataFormatError("oracle selection needs frames on both sides of the annotation")
    pos = np.sort(rng.choice(inside, size=k_eff, replace=False))
    neg = np.sort(rng.choice(outside, size=k_eff, replace=False))
    return SampleSets(pos_indices=pos, neg_indices=neg,
                      pos_scores=scores[pos], neg_scores=scores[neg])


def gt_frame_mask(n: int, fps: float, ann: VideoAnnotation) -> np.ndarray:
    """True for frames whose midpoint falls in any annotated segment."""
    mid = (np.arange(n) + 0.5) / fps
    mask = np.zeros(n, dtype=bool)
    for seg in ann.segments:
        mask |= (mid >= seg.start_s) & (mid < seg.end_s)
    return mask


def adapt(view: VideoView, bank: LabelBank, pseudo: PseudoLabel,
          config: RunConfig, state: AdapterState, rng: np.random.Generator,
          gt_mask: np.ndarray | None = None) -> AdaptResult:
    """Run up to config.steps adaptation steps, re-selecting samples each step.
    Stops early once the best loss has not strictly improved for
    config.patience consecutive steps, i.e. the trace then has exactly
    best_step + patience entries. steps == 0 returns the state untouched."""
    n = view.track.num_frames
    if config.steps == 0:
        return AdaptResult(state=state, trace=[], best_step=0, stopped_early=False)
    if n < 2:
        log.warning("%s: %d frame(s), skipping adaptation", view.track.video_id, n)
        return AdaptResult(state=state, trace=[], best_step=0, stopped_early=False)
    if config.oracle_selection:
        assert gt_mask is not None
        if not gt_mask.any() or gt_mask.all():
            log.warning("%s: annotation covers none/all frames, skipping oracle adaptation",
                        view.track.video_id)
            return AdaptResult(state=state, trace=[], best_step=0, stopped_early=False)

    text = bank.texts[pseudo.label_index]
    live_mask = None if view.dead_mask is None else ~view.dead_mask
    trace: list[LossBreakdown] = []
    best = np.inf
    best_step = 0
    stale = 0
    stopped = False
    for step in range(1, config.steps + 1):
        scores = frame_scores(view, text, state, config.tau_sigmoid)
        if config.oracle_selection:
            sets = oracle_selection_sets(scores, gt_mask, config.k, rng)
        else:
            jit = resolve_jitter(config, n, min(config.k, n // 2))
            sets = select_samples(scores, config.k, jit, rng, pos_mask=live_mask)
        pair = None
        if sets.k >= 2:
            i, j = rng.choice(sets.k, size=2, replace=False)
            pair = (int(i), int(j))
        try:
            breakdown, grads = loss_and_grad(
                state, view.track.frames[sets.pos_indices],
                view.track.frames[sets.neg_indices], text, pair,
                frame_offset=view.offset, tau_sigmoid=config.tau_sigmoid)
        except NumericError as e:
            raise NumericError(f"{view.track.video_id}: step {step}: {e}") from e
        state = adam_step(state, grads, lr=config.lr)
        breakdown.step = step
        trace.append(breakdown)
        if breakdown.total < best - _IMPROVE_EPS:
            best = breakdown.total
            best_step = step
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                stopped = True
                break
    return AdaptResult(state=state, trace=trace, best_step=best_step,
                       stopped_early=stopped)


def smooth_scores(scores: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with an odd window; the window shrinks near the
    boundaries instead of padding."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    n = len(scores)
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(scores, dtype=np.float64)])
    lo = np.maximum(np.arange(n) - h, 0)
    hi = np.minimum(np.arange(n) + h + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


def _foreground_runs(fg: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, flag in enumerate(fg):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(fg) - 1))
    return runs


def extract_regions(smoothed: np.ndarray, view: VideoView, bank: LabelBank,
                    state: AdapterState) -> list[Proposal]:
    """Threshold at the mean smoothed score (strictly above), group the
    survivors into maximal runs, and label each run by the closest projected
    text to its mean frame vector; that cosine is the proposal score."""
    gamma = float(smoothed.mean())
    fg = smoothed > gamma
    runs = _foreground_runs(fg)
    if not runs:
        return []
    z = view.projected_frames(state)
    u = bank.texts @ state.w_l
    nu = np.maximum(np.linalg.norm(u, axis=1), _NORM_FLOOR)
    fps = view.track.fps
    proposals = []
    for first, last in runs:
        mean_vec = z[first:last + 1].mean(axis=0)
        nm = max(float(np.linalg.norm(mean_vec)), _NORM_FLOOR)
        sims = (u @ mean_vec) / (nu * nm)
        label = int(np.argmax(sims))
        proposals.append(Proposal(label_index=label,
                                  start_s=first / fps, end_s=(last + 1) / fps,
                                  score=float(sims[label]),
                                  first_frame=first, last_frame=last))
    return proposals


def suppress(proposals: list[Proposal], view: VideoView, bank: LabelBank,
             state: AdapterState, alpha: float, beta: float) -> list[Proposal]:
    """Caption-coherence pruning. Each proposal is summarized by its mean
    projected caption embedding; the pairwise cosine matrix is binarized at
    beta (diagonal forced to 1) and a proposal survives iff its column sum,
    normalized by the proposal count, reaches alpha. Without captions this is
    an identity pass."""
    m = len(proposals)
    if m == 0:
        return []
    caps = view.track.captions
    if caps is None:
        log.warning("%s: no caption embeddings, suppression skipped", view.track.video_id)
        return list(proposals)
    if caps.shape[1] != state.w_l.shape[0]:
        raise DataFormatError(
            f"{view.track.video_id}: caption dim {caps.shape[1]} does not match "
            f"language projection input {state.w_l.shape[0]}")
    proj = caps @ state.w_l
    reps = np.empty((m, proj.shape[1]))
    for i, p in enumerate(proposals):
        reps[i] = proj[p.first_frame:p.last_frame + 1].mean(axis=0)
        if np.linalg.norm(reps[i]) < _NORM_FLOOR:
            raise NumericError(
                f"{view.track.video_id}: proposal {i}: zero-norm caption mean")
    norms = np.linalg.norm(reps, axis=1)
    sim = np.clip((reps @ reps.T) / np.outer(norms, norms), -1.0, 1.0)
    binary = sim >= beta
    np.fill_diagonal(binary, True)
    keep = binary.sum(axis=0) / m >= alpha
    return [p for p, k in zip(proposals, keep) if k]


def _region_pseudo_sims(proposals: list[Proposal], view: VideoView,
                        bank: LabelBank, state: AdapterState,
                        pseudo: PseudoLabel) -> np.ndarray:
    z = view.projected_frames(state)
    u = bank.texts[pseudo.label_index] @ state.w_l
    nu = max(float(np.linalg.norm(u)), _NORM_FLOOR)
    sims = np.empty(len(proposals))
    for i, p in enumerate(proposals):
        mv = z[p.first_frame:p.last_frame + 1].mean(axis=0)
        sims[i] = float(mv @ u) / (max(float(np.linalg.norm(mv)), _NORM_FLOOR) * nu)
    return sims


def oracle_count_filter(proposals: list[Proposal], view: VideoView,
                        bank: LabelBank, state: AdapterState,
                        pseudo: PseudoLabel, m: int) -> list[Proposal]:
    """Keep the m proposals most cosine-similar to the pseudo-label text,
    preserving temporal order. m >= len(proposals) is an identity pass."""
    if m >= len(proposals):
        return list(proposals)
    sims = _region_pseudo_sims(proposals, view, bank, state, pseudo)
    ranked = sorted(range(len(proposals)),
                    key=lambda i: (-sims[i], proposals[i].first_frame, i))
    kept = sorted(ranked[:max(m, 0)])
    return [proposals[i] for i in kept]


def oracle_class_label(track: FeatureTrack, bank: LabelBank, state: AdapterState,
                       ann: VideoAnnotation) -> PseudoLabel:
    """Pseudo-label forced to the majority ground-truth label: most segments,
    ties by longer total duration, then lower label index."""
    if not ann.segments:
        raise DataFormatError(f"{track.video_id}: oracle class needs annotated segments")
    counts: dict[int, list[float]] = {}
    for seg in ann.segments:
        idx = bank.names.index(seg.label)
        counts.setdefault(idx, [0, 0.0])
        counts[idx][0] += 1
        counts[idx][1] += seg.length_s
    label = min(counts, key=lambda i: (-counts[i][0], -counts[i][1], i))
    mean_z = track.frames.mean(axis=0) @ state.w_v
    u = bank.texts[label] @ state.w_l
    nz = max(float(np.linalg.norm(mean_z)), _NORM_FLOOR)
    nu = max(float(np.linalg.norm(u)), _NORM_FLOOR)
    return PseudoLabel(label_index=label,
                       similarity=float(mean_z @ u) / (nz * nu),
                       mean_embedding=mean_z)


@dataclass
class VideoResult:
    video_id: str
    proposals: list[Proposal]
    pseudo: PseudoLabel
    adapt: AdaptResult


def localize_video(track: FeatureTrack, bank: LabelBank, config: RunConfig,
                   state: AdapterState,
                   ann: VideoAnnotation | None = None) -> VideoResult:
    """Full per-video pass. `state` is never mutated; every video starts from
    it and the adapted copy is dropped with the returned result."""
    config.validate()
    if config.needs_annotations() and ann is None:
        flag = ("--oracle-class" if config.oracle_class else
                "--oracle-count" if config.oracle_count else "--oracle-selection")
        raise DataFormatError(f"{track.video_id}: {flag} requires annotations")
    rng = video_rng(config.seed, track.video_id)

    if config.oracle_class:
        pseudo = oracle_class_label(track, bank, state, ann)
    else:
        pseudo = pseudo_label(track, bank, state)

    if config.subtract_pseudo_label:
        view = subtract_background(track, pseudo, bank, state)
    else:
        view = VideoView(track=track)

    gt_mask = None
    if config.oracle_selection:
        gt_mask = gt_frame_mask(track.num_frames, track.fps, ann)
    result = adapt(view, bank, pseudo, config, state, rng, gt_mask=gt_mask)

    scores = frame_scores(view, bank.texts[pseudo.label_index], result.state,
                          config.tau_sigmoid)
    smoothed = smooth_scores(scores, config.window)
    proposals = extract_regions(smoothed, view, bank, result.state)
    if config.oracle_count:
        proposals = oracle_count_filter(proposals, view, bank, result.state,
                                        pseudo, m=len(ann.segments))
    else:
        proposals = suppress(proposals, view, bank, result.state,
                             config.alpha, config.beta)
    return VideoResult(video_id=track.video_id, proposals=proposals,
                       pseudo=pseudo, adapt=result)


def naive_baseline(track: FeatureTrack, bank: LabelBank, state: AdapterState,
                   threshold: float = 0.8, scale: float = 100.0) -> list[Proposal]:
    """Frame-wise zero-shot baseline: softmax over scaled image-text cosines,
    a frame is foreground iff its top probability exceeds the fixed threshold,
    and consecutive foreground frames sharing an argmax label form a proposal
    scored by the mean top probability."""
    z = track.frames @ state.w_v
    u = bank.texts @ state.w_l
    nz = np.maximum(np.linalg.norm(z, axis=1), _NORM_FLOOR)
    nu = np.maximum(np.linalg.norm(u, axis=1), _NORM_FLOOR)
    cos = (z @ u.T) / np.outer(nz, nu)
    probs = softmax(cos, scale=scale)
    top = probs.argmax(axis=1)
    pmax = probs.max(axis=1)
    fg = pmax > threshold
    fps = track.fps
    proposals = []
    start = None
    for i in range(len(fg) + 1):
        boundary = (i == len(fg) or not fg[i]
                    or (start is not None and top[i] != top[start]))
        if start is not None and boundary:
            proposals.append(Proposal(
                label_index=int(top[start]),
                start_s=start / fps, end_s=i / fps,
                score=float(pmax[start:i].mean()),
                first_frame=start, last_frame=i - 1))
            start = None
        if i < len(fg) and fg[i] and start is None:
            start = i
    return proposals


# ---------------------------------------------------------------------------
# manifest-level drivers

def _to_predictions(bank: LabelBank, results: dict[str, list[Proposal]]):
    return {vid: [PredictedSegment(label=bank.names[p.label_index],
                                   start_s=p.start_s, end_s=p.end_s, score=p.score)
                  for p in props]
            for vid, props in results.items()}


def _map_videos(manifest: Manifest, worker, threads: int) -> list:
    if threads <= 1:
        return [worker(ref) for ref in manifest.videos]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, manifest.videos))


def run_manifest(manifest: Manifest, config: RunConfig, threads: int = 1):
    """Localize every video in manifest order; returns ({id: [PredictedSegment]},
    [VideoResult]). Thread count affects wall time only, never results."""
    config.validate()
    if config.needs_annotations():
        if manifest.annotations is None:
            raise DataFormatError("oracle flags need a manifest with annotations")
        missing = [r.video_id for r in manifest.videos
                   if r.video_id not in manifest.annotations]
        if missing:
            raise DataFormatError(f"annotations missing for: {', '.join(missing)}")

    probe = manifest.load_track(manifest.videos[0])
    state = make_initial_state(bank=manifest.bank, frame_dim=probe.dim)

    def worker(ref):
        track = probe if ref is manifest.videos[0] else manifest.load_track(ref)
        ann = manifest.annotations.get(ref.video_id) if config.needs_annotations() else None
        res = localize_video(track, manifest.bank, config, state, ann)
        log.info("%s: %d proposals after %d adaptation step(s)",
                 ref.video_id, len(res.proposals), len(res.adapt.trace))
        return res

    results = _map_videos(manifest, worker, threads)
    by_id = {r.video_id: r.proposals for r in results}
    return _to_predictions(manifest.bank, by_id), results


def run_baseline_manifest(manifest: Manifest, threshold: float = 0.8,
                          scale: float = 100.0, threads: int = 1):
    probe = manifest.load_track(manifest.videos[0])
    state = make_initial_state(bank=manifest.bank, frame_dim=probe.dim)

    def worker(ref):
        track = probe if ref is manifest.videos[0] else manifest.load_track(ref)
        props = naive_baseline(track, manifest.bank, state, threshold, scale)
        log.info("%s: %d baseline proposals", ref.video_id, len(props))
        return ref.video_id, props

    results = _map_videos(manifest, worker, threads)
    return _to_predictions(manifest.bank, dict(results))

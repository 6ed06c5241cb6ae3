"""Synthetic generator: reproducibility, planted-segment bookkeeping, the
noise model, score-level invariants of both background modes, and end-to-end
navigability of an easy dataset."""

import json
from dataclasses import asdict, replace

import numpy as np
import pytest

from tzal.featio import DataFormatError, read_manifest
from tzal.pipeline import RunConfig, run_manifest
from tzal.synth import SynthSpec, _ar1_noise, describe, generate


def small_spec(**over):
    base = dict(videos=6, categories=4, seed=5)
    base.update(over)
    return SynthSpec(**base)


def frame_bounds(ann, fps):
    return [(round(s.start_s * fps), round(s.end_s * fps) - 1) for s in ann.segments]


# ---------------------------------------------------------------------------
# reproducibility


def test_regeneration_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate(small_spec(), a)
    generate(small_spec(), b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) >= 9
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_different_seeds_differ(tmp_path):
    generate(small_spec(), tmp_path / "a")
    generate(small_spec(seed=6), tmp_path / "b")
    fa = (tmp_path / "a" / "features" / "vid0000.tzal").read_bytes()
    fb = (tmp_path / "b" / "features" / "vid0000.tzal").read_bytes()
    assert fa != fb


# ---------------------------------------------------------------------------
# planted segments


def test_planted_segments_respect_spec_bounds(tmp_path):
    spec = SynthSpec(videos=20, seed=9)
    man = read_manifest(generate(spec, tmp_path))
    assert len(man.videos) == 20
    for ref in man.videos:
        ann = man.annotations[ref.video_id]
        segs = frame_bounds(ann, 5.0)
        assert spec.segments_min <= len(segs) <= spec.segments_max
        labels = {s.label for s in ann.segments}
        assert len(labels) == 1 and labels <= set(man.bank.names)
        prev_end = -2
        for first, last in segs:
            assert 0 <= first <= last < spec.frames
            assert spec.segment_len_min <= last - first + 1 <= spec.segment_len_max
            assert first > prev_end + 1, "segments must not touch or overlap"
            prev_end = last


def test_tracks_match_manifest_shapes(tmp_path):
    spec = small_spec(frames=40, dim=16, segments_max=1,
                      segment_len_min=10, segment_len_max=20)
    man = read_manifest(generate(spec, tmp_path))
    texts = man.bank.texts
    assert texts.shape == (4, 16)
    # orthonormal category texts
    assert np.allclose(texts @ texts.T, np.eye(4), atol=1e-5)
    for ref in man.videos:
        tr = man.load_track(ref)
        assert tr.frames.shape == (40, 16)
        assert tr.captions.shape == (40, 16)
        assert np.allclose(np.linalg.norm(tr.frames, axis=1), 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# sigma -> 0 invariants


def test_sigma_zero_action_rows_equal_text(tmp_path):
    spec = small_spec(noise_sigma=0.0, caption_noise_sigma=0.0, background="random")
    man = read_manifest(generate(spec, tmp_path))
    for ref in man.videos:
        tr = man.load_track(ref)
        ann = man.annotations[ref.video_id]
        t = man.bank.texts[man.bank.names.index(ann.segments[0].label)]
        for first, last in frame_bounds(ann, 5.0):
            assert np.array_equal(tr.frames[first:last + 1],
                                  np.broadcast_to(t, (last - first + 1, len(t))))


def test_sigma_zero_random_background_score_gap(tmp_path):
    spec = small_spec(noise_sigma=0.0, caption_noise_sigma=0.0, background="random")
    man = read_manifest(generate(spec, tmp_path))
    for ref in man.videos:
        tr = man.load_track(ref)
        ann = man.annotations[ref.video_id]
        t = man.bank.texts[man.bank.names.index(ann.segments[0].label)]
        sc = tr.frames @ t
        act = np.zeros(len(sc), bool)
        for first, last in frame_bounds(ann, 5.0):
            act[first:last + 1] = True
        assert sc[act].min() - sc[~act].max() > 0.2


def test_sigma_zero_near_miss_still_generates(tmp_path):
    man = read_manifest(generate(small_spec(noise_sigma=0.0,
                                            caption_noise_sigma=0.0), tmp_path))
    tr = man.load_track(man.videos[0])
    assert np.isfinite(tr.frames).all()


# ---------------------------------------------------------------------------
# near-miss score structure


def test_near_miss_background_sits_below_action(tmp_path):
    man = read_manifest(generate(small_spec(videos=8), tmp_path))
    for ref in man.videos:
        tr = man.load_track(ref)
        ann = man.annotations[ref.video_id]
        t = man.bank.texts[man.bank.names.index(ann.segments[0].label)]
        sc = tr.frames @ t
        act = np.zeros(len(sc), bool)
        for first, last in frame_bounds(ann, 5.0):
            act[first:last + 1] = True
        gamma = sc.mean()
        assert sc[~act].max() < sc[act].mean()
        # shoulders: background mass right at the threshold
        near = np.abs(sc[~act] - gamma) < 0.02
        assert near.sum() >= 8
        # floor: stable low-scoring background well below the threshold
        assert (sc[~act] < gamma - 0.08).sum() >= 4


def test_action_captions_echo_category_weakly(tmp_path):
    man = read_manifest(generate(small_spec(videos=8), tmp_path))
    for ref in man.videos:
        tr = man.load_track(ref)
        ann = man.annotations[ref.video_id]
        t = man.bank.texts[man.bank.names.index(ann.segments[0].label)]
        cap = tr.captions @ t
        act = np.zeros(len(cap), bool)
        for first, last in frame_bounds(ann, 5.0):
            act[first:last + 1] = True
        assert 0.2 < cap[act].mean() < 0.7
        assert (cap[act] > 0.75).mean() < 0.05


# ---------------------------------------------------------------------------
# noise model


def test_ar1_noise_marginal_is_unit_gaussian():
    rng = np.random.default_rng(0)
    x = _ar1_noise(rng, 6000, 8, 0.9)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.05
    lag1 = (x[:-1] * x[1:]).mean()
    assert abs(lag1 - 0.9) < 0.02


def test_ar1_noise_phi_zero_is_iid_draw():
    a = _ar1_noise(np.random.default_rng(3), 50, 4, 0.0)
    b = np.random.default_rng(3).standard_normal((50, 4))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# spec validation and serialization


@pytest.mark.parametrize("bad", [
    dict(videos=0),
    dict(frames=0),
    dict(dim=0),
    dict(categories=0),
    dict(categories=65),
    dict(segments_min=0),
    dict(segments_min=3, segments_max=2),
    dict(segment_len_min=0),
    dict(segment_len_min=40, segment_len_max=30),
    dict(frames=50, segments_max=3, segment_len_min=25),
    dict(fps=0.0),
    dict(noise_sigma=-0.1),
    dict(noise_phi=1.0),
    dict(noise_phi=-0.1),
    dict(background="checkerboard"),
    dict(near_miss_mix=0.0),
    dict(near_miss_mix=1.0),
    dict(near_miss_margin_lo=0.01, near_miss_margin_hi=-0.01),
    dict(near_miss_shoulder_min=0),
    dict(near_miss_shoulder_min=9, near_miss_shoulder_max=8),
    dict(near_miss_ramp=0),
    dict(near_miss_floor=0.0),
])
def test_spec_validation_rejects(bad):
    with pytest.raises(DataFormatError):
        SynthSpec(**bad).validate()


def test_spec_json_roundtrip(tmp_path):
    spec = small_spec(noise_phi=0.5, near_miss_mix=0.7)
    path = tmp_path / "spec.json"
    spec.to_json(path)
    assert asdict(SynthSpec.from_json(path)) == asdict(spec)


def test_spec_json_unknown_field_rejected(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"videos": 3, "warp_speed": 9}))
    with pytest.raises(DataFormatError, match="warp_speed"):
        SynthSpec.from_json(path)


def test_generated_spec_file_roundtrips(tmp_path):
    spec = small_spec()
    generate(spec, tmp_path)
    assert asdict(SynthSpec.from_json(tmp_path / "synth_spec.json")) == asdict(spec)


# ---------------------------------------------------------------------------
# describe


def test_describe_expected_foreground_fraction():
    ten = SynthSpec(segments_min=1, segments_max=1,
                    segment_len_min=20, segment_len_max=20)
    assert describe(ten)["expected_foreground_fraction"] == pytest.approx(0.1)
    twenty = SynthSpec(segments_min=1, segments_max=3,
                       segment_len_min=20, segment_len_max=20)
    assert describe(twenty)["expected_foreground_fraction"] == pytest.approx(0.2)
    assert describe(ten)["duration_s"] == pytest.approx(40.0)


def test_describe_caps_fraction_at_one():
    crowded = SynthSpec(segments_min=3, segments_max=3,
                        segment_len_min=60, segment_len_max=180)
    assert describe(crowded)["expected_foreground_fraction"] == 1.0


# ---------------------------------------------------------------------------
# degenerate shapes


def test_single_frame_video_generates(tmp_path):
    spec = SynthSpec(videos=1, frames=1, dim=8, categories=2,
                     segments_min=1, segments_max=1,
                     segment_len_min=1, segment_len_max=1, seed=2)
    man = read_manifest(generate(spec, tmp_path))
    tr = man.load_track(man.videos[0])
    assert tr.frames.shape == (1, 8)
    assert len(man.annotations["vid0000"].segments) == 1


# ---------------------------------------------------------------------------
# end-to-end navigability


def test_easy_dataset_localizes_cleanly(tmp_path):
    # one planted segment, low noise: the full pipeline should return exactly
    # one proposal per video with high overlap and the right label
    spec = SynthSpec(videos=1, categories=3, segments_min=1, segments_max=1,
                     noise_sigma=0.02, caption_noise_sigma=0.02,
                     background="random", seed=7)
    man = read_manifest(generate(spec, tmp_path))
    preds, _ = run_manifest(man, RunConfig())
    (vid, ps), = preds.items()
    gt = man.annotations[vid].segments[0]
    assert len(ps) == 1
    p = ps[0]
    assert p.label == gt.label
    inter = max(0.0, min(p.end_s, gt.end_s) - max(p.start_s, gt.start_s))
    union = max(p.end_s, gt.end_s) - min(p.start_s, gt.start_s)
    assert inter / union >= 0.9

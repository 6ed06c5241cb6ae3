"""Binary container and JSON format round trips plus malformed-input checks."""

import json
import struct

import numpy as np
import pytest

from tzal.featio import (DataFormatError, FeatureTrack, PredictedSegment,
                         Segment, VideoAnnotation, read_annotations,
                         read_feature_file, read_manifest, read_matrix_file,
                         read_predictions, write_annotations,
                         write_feature_file, write_manifest, write_matrix_file,
                         write_predictions)


def random_track(rng, with_captions):
    n = int(rng.integers(1, 40))
    d = int(rng.integers(1, 24))
    captions = None
    if with_captions:
        dc = int(rng.integers(1, 24))
        captions = rng.standard_normal((n, dc))
    return FeatureTrack(video_id=f"vid{rng.integers(0, 10**6):06d}",
                        fps=float(rng.uniform(0.5, 60.0)),
                        frames=rng.standard_normal((n, d)),
                        captions=captions)


def test_round_trip_bit_exact(tmp_path):
    # f32 storage: write the f32-quantized track and expect exact recovery
    rng = np.random.default_rng(7)
    for trial in range(100):
        track = random_track(rng, with_captions=trial % 2 == 0)
        track.frames = track.frames.astype(np.float32).astype(np.float64)
        if track.captions is not None:
            track.captions = track.captions.astype(np.float32).astype(np.float64)
        path = tmp_path / f"{track.video_id}.tzal"
        write_feature_file(track, path)
        back = read_feature_file(path)
        assert back.video_id == track.video_id
        assert np.array_equal(back.frames, track.frames)
        assert back.fps == np.float32(track.fps)
        if track.captions is None:
            assert back.captions is None
        else:
            assert np.array_equal(back.captions, track.captions)


def test_storage_is_f32_compute_is_f64(tmp_path):
    value = 0.1  # not representable in f32
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.full((2, 2), value))
    write_feature_file(track, tmp_path / "v.tzal")
    back = read_feature_file(tmp_path / "v.tzal")
    assert back.frames.dtype == np.float64
    assert back.frames[0, 0] == np.float64(np.float32(value))
    assert back.frames[0, 0] != value


def test_video_id_defaults_to_stem_and_override(tmp_path):
    track = FeatureTrack(video_id="orig", fps=2.0, frames=np.ones((3, 4)))
    write_feature_file(track, tmp_path / "renamed.tzal")
    assert read_feature_file(tmp_path / "renamed.tzal").video_id == "renamed"
    assert read_feature_file(tmp_path / "renamed.tzal",
                             video_id="orig").video_id == "orig"


def test_truncated_file_rejected(tmp_path):
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.ones((4, 3)))
    path = tmp_path / "v.tzal"
    write_feature_file(track, path)
    raw = path.read_bytes()
    for cut in (3, 10, len(raw) - 5):
        path.write_bytes(raw[:cut])
        with pytest.raises(DataFormatError, match="truncated"):
            read_feature_file(path)


def test_trailing_bytes_rejected(tmp_path):
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.ones((4, 3)))
    path = tmp_path / "v.tzal"
    write_feature_file(track, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(DataFormatError, match="trailing"):
        read_feature_file(path)


def test_bad_magic_and_version(tmp_path):
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.ones((2, 2)))
    path = tmp_path / "v.tzal"
    write_feature_file(track, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="magic"):
        read_feature_file(path)
    raw[:4] = b"TZAL"
    struct.pack_into("<I", raw, 4, 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="version"):
        read_feature_file(path)


def test_nan_rejected_on_write_and_read(tmp_path):
    bad = FeatureTrack(video_id="v", fps=1.0,
                       frames=np.array([[1.0, np.nan]]))
    with pytest.raises(DataFormatError, match="NaN"):
        write_feature_file(bad, tmp_path / "bad.tzal")
    # smuggle a NaN into an otherwise valid file
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.ones((2, 2)))
    path = tmp_path / "v.tzal"
    write_feature_file(track, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<f", raw, 24, float("inf"))
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="NaN"):
        read_feature_file(path)


def test_zero_rows_rejected(tmp_path):
    with pytest.raises(DataFormatError, match="frames"):
        write_feature_file(FeatureTrack(video_id="v", fps=1.0,
                                        frames=np.ones((0, 3))),
                           tmp_path / "v.tzal")


def test_bad_fps_rejected(tmp_path):
    for fps in (0.0, -1.0, float("nan")):
        with pytest.raises(DataFormatError, match="fps"):
            write_feature_file(FeatureTrack(video_id="v", fps=fps,
                                            frames=np.ones((1, 1))),
                               tmp_path / "v.tzal")


def test_caption_row_mismatch_rejected(tmp_path):
    track = FeatureTrack(video_id="v", fps=1.0, frames=np.ones((3, 2)),
                         captions=np.ones((2, 2)))
    with pytest.raises(DataFormatError, match="caption"):
        write_feature_file(track, tmp_path / "v.tzal")


def test_u32_overflow_guard(tmp_path):
    huge = np.broadcast_to(np.float64(0.0), (1, 2**32 + 1))  # virtual, no memory
    with pytest.raises(DataFormatError, match="overflow"):
        write_feature_file(FeatureTrack(video_id="v", fps=1.0, frames=huge),
                           tmp_path / "v.tzal")


def test_matrix_helpers(tmp_path):
    mat = np.arange(12, dtype=np.float64).reshape(3, 4)
    write_matrix_file(mat, tmp_path / "m.tzal")
    assert np.array_equal(read_matrix_file(tmp_path / "m.tzal"), mat)


def test_annotation_round_trip(tmp_path):
    ann = {
        "a": VideoAnnotation(duration_s=10.0,
                             segments=[Segment("x", 0.5, 3.25),
                                       Segment("y", 4.0, 9.75)]),
        "b": VideoAnnotation(duration_s=5.0, segments=[]),
    }
    path = tmp_path / "ann.json"
    write_annotations(ann, path)
    back = read_annotations(path)
    assert list(back) == ["a", "b"]
    assert back["a"].duration_s == 10.0
    assert [(s.label, s.start_s, s.end_s) for s in back["a"].segments] == \
        [("x", 0.5, 3.25), ("y", 4.0, 9.75)]
    assert back["b"].segments == []


def test_annotation_validation(tmp_path):
    path = tmp_path / "ann.json"

    def attempt(videos):
        path.write_text(json.dumps({"videos": videos}))
        return read_annotations(path)

    with pytest.raises(DataFormatError, match="bad segment"):
        attempt([{"id": "v", "duration": 5.0,
                  "segments": [{"label": "x", "start": 3.0, "end": 3.0}]}])
    with pytest.raises(DataFormatError, match="exceeds duration"):
        attempt([{"id": "v", "duration": 5.0,
                  "segments": [{"label": "x", "start": 0.0, "end": 5.6}]}])
    # half-second slack at the clip end is tolerated
    ok = attempt([{"id": "v", "duration": 5.0,
                   "segments": [{"label": "x", "start": 0.0, "end": 5.4}]}])
    assert ok["v"].segments[0].end_s == 5.4
    with pytest.raises(DataFormatError, match="duplicate"):
        attempt([{"id": "v", "duration": 5.0, "segments": []},
                 {"id": "v", "duration": 5.0, "segments": []}])
    with pytest.raises(DataFormatError, match="not a number"):
        attempt([{"id": "v", "duration": "soon", "segments": []}])


def test_prediction_round_trip_and_sorted_output(tmp_path):
    preds = {
        "zebra": [PredictedSegment("x", 0.0, 1.0, 0.9)],
        "alpha": [PredictedSegment("y", 2.0, 3.5, 0.25),
                  PredictedSegment("x", 4.0, 5.0, 0.5)],
    }
    path = tmp_path / "pred.json"
    write_predictions(preds, path, config={"steps": 0})
    doc = json.loads(path.read_text())
    assert [v["id"] for v in doc["videos"]] == ["alpha", "zebra"]
    assert doc["config"] == {"steps": 0}
    back = read_predictions(path)
    assert back.keys() == preds.keys()
    assert back["alpha"][0] == PredictedSegment("y", 2.0, 3.5, 0.25)


def make_dataset(tmp_path, with_annotations=True, with_projections=False):
    rng = np.random.default_rng(0)
    d = 6
    labels = ["run", "jump"]
    write_matrix_file(rng.standard_normal((2, d)), tmp_path / "texts.tzal")
    videos = []
    for vid in ("v1", "v2"):
        write_feature_file(FeatureTrack(video_id=vid, fps=2.0,
                                        frames=rng.standard_normal((8, d))),
                           tmp_path / f"{vid}.tzal")
        videos.append((vid, f"{vid}.tzal"))
    projections = None
    if with_projections:
        write_matrix_file(np.eye(d), tmp_path / "pv.tzal")
        write_matrix_file(np.eye(d), tmp_path / "pl.tzal")
        projections = {"proj_v": "pv.tzal", "proj_l": "pl.tzal"}
    annotations = None
    if with_annotations:
        write_annotations({"v1": VideoAnnotation(4.0, [Segment("run", 0.0, 1.0)])},
                          tmp_path / "ann.json")
        annotations = "ann.json"
    write_manifest(tmp_path / "manifest.json", labels=labels,
                   text_file="texts.tzal", videos=videos,
                   projections=projections, annotations=annotations)
    return tmp_path / "manifest.json"


def test_manifest_reading(tmp_path):
    path = make_dataset(tmp_path, with_projections=True)
    manifest = read_manifest(path)
    assert manifest.bank.names == ["run", "jump"]
    assert manifest.bank.proj_v.shape == (6, 6)
    assert [v.video_id for v in manifest.videos] == ["v1", "v2"]
    assert manifest.annotations is not None
    track = manifest.load_track(manifest.videos[1])
    assert track.video_id == "v2"
    assert track.num_frames == 8


def test_manifest_unknown_annotation_label(tmp_path):
    path = make_dataset(tmp_path)
    ann_path = tmp_path / "ann.json"
    doc = json.loads(ann_path.read_text())
    doc["videos"][0]["segments"][0]["label"] = "swim"
    ann_path.write_text(json.dumps(doc))
    with pytest.raises(DataFormatError, match="unknown label"):
        read_manifest(path)


def test_manifest_missing_feature_file(tmp_path):
    path = make_dataset(tmp_path)
    (tmp_path / "v2.tzal").unlink()
    with pytest.raises(DataFormatError, match="not found"):
        read_manifest(path)


def test_manifest_text_shape_mismatch(tmp_path):
    path = make_dataset(tmp_path)
    write_matrix_file(np.ones((3, 6)), tmp_path / "texts.tzal")
    with pytest.raises(DataFormatError, match="labels"):
        read_manifest(path)


def test_manifest_single_projection_rejected(tmp_path):
    path = make_dataset(tmp_path)
    doc = json.loads(path.read_text())
    write_matrix_file(np.eye(6), tmp_path / "pv.tzal")
    doc["projections"] = {"proj_v": "pv.tzal"}
    path.write_text(json.dumps(doc))
    with pytest.raises(DataFormatError, match="proj"):
        read_manifest(path)

import pytest

from tzalx.container import ExtractError
from tzalx.jobs import ExtractJob, check_labels, format_prompt


def make_job(tmp_path, **overrides):
    src = tmp_path / "clip"
    src.mkdir(exist_ok=True)
    fields = dict(sources=[src], out_dir=tmp_path / "out")
    fields.update(overrides)
    return ExtractJob(**fields)


def test_default_template_has_one_placeholder(tmp_path):
    job = make_job(tmp_path)
    job.validate()
    assert job.prompt_template.count("{CLS}") == 1


@pytest.mark.parametrize("template", [
    "a video of action",            # placeholder missing
    "{CLS} versus {CLS}",           # placeholder twice
    "",
])
def test_bad_templates_rejected(tmp_path, template):
    with pytest.raises(ExtractError, match="exactly once"):
        make_job(tmp_path, prompt_template=template).validate()


def test_other_braces_survive_formatting():
    assert format_prompt("do {CLS} {fast}", "jumps") == "do jumps {fast}"


@pytest.mark.parametrize("fps", [0.0, -2.0, float("nan"), float("inf")])
def test_bad_fps_rejected(tmp_path, fps):
    with pytest.raises(ExtractError, match="fps"):
        make_job(tmp_path, fps=fps).validate()


def test_empty_sources_rejected(tmp_path):
    with pytest.raises(ExtractError, match="no input"):
        make_job(tmp_path, sources=[]).validate()


def test_missing_source_rejected(tmp_path):
    with pytest.raises(ExtractError, match="no such file"):
        make_job(tmp_path, sources=[tmp_path / "ghost"]).validate()


def test_colliding_video_ids_rejected(tmp_path):
    a = tmp_path / "one" / "clip"
    b = tmp_path / "two" / "clip"
    a.mkdir(parents=True)
    b.mkdir(parents=True)
    with pytest.raises(ExtractError, match="duplicate video ids"):
        make_job(tmp_path, sources=[a, b]).validate()


def test_check_labels():
    assert check_labels(["a", "b"]) == ["a", "b"]
    with pytest.raises(ExtractError, match="empty"):
        check_labels([])
    with pytest.raises(ExtractError, match="non-empty"):
        check_labels(["a", ""])
    with pytest.raises(ExtractError, match="duplicate"):
        check_labels(["a", "a"])

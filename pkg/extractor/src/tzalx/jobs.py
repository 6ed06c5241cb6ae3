"""Extraction job description and validation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import ExtractError

DEFAULT_PROMPT_TEMPLATE = "a video of action {CLS}"
PLACEHOLDER = "{CLS}"


def format_prompt(template: str, label: str) -> str:
    # plain replace: templates may legitimately contain other brace pairs
    return template.replace(PLACEHOLDER, label)


@dataclass
class ExtractJob:
    sources: list[Path]            # video files or frame directories
    out_dir: Path
    model: str = "hash"
    captioner: str | None = None   # None = the embedder's own captioner, if any
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    fps: float = 5.0
    captions: bool = True
    fidelity: bool = True          # re-read written files and verify payloads

    def __post_init__(self):
        self.sources = [Path(s) for s in self.sources]
        self.out_dir = Path(self.out_dir)

    def validate(self) -> None:
        if not self.sources:
            raise ExtractError("no input videos or frame directories")
        for src in self.sources:
            if not src.exists():
                raise ExtractError(f"{src}: no such file or directory")
        stems = [src.stem if src.is_file() else src.name for src in self.sources]
        dupes = {s for s in stems if stems.count(s) > 1}
        if dupes:
            raise ExtractError(
                f"duplicate video ids from sources: {', '.join(sorted(dupes))}")
        if self.prompt_template.count(PLACEHOLDER) != 1:
            raise ExtractError(
                f"prompt template must contain {PLACEHOLDER} exactly once: "
                f"{self.prompt_template!r}")
        if not np.isfinite(self.fps) or self.fps <= 0:
            raise ExtractError(f"fps must be positive, got {self.fps}")


def check_labels(labels: list[str]) -> list[str]:
    if not labels:
        raise ExtractError("label list is empty")
    if any(not isinstance(x, str) or not x for x in labels):
        raise ExtractError("labels must be non-empty strings")
    if len(set(labels)) != len(labels):
        raise ExtractError("duplicate labels")
    return list(labels)

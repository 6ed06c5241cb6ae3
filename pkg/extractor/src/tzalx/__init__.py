"""Embedding extractor for the localization engine's file formats."""

from .backends import BlipCaptioner, ClipBackend, HashBackend, load_backend
from .container import ExtractError
from .export import run_job
from .jobs import DEFAULT_PROMPT_TEMPLATE, ExtractJob

__all__ = [
    "BlipCaptioner", "ClipBackend", "DEFAULT_PROMPT_TEMPLATE", "ExtractError",
    "ExtractJob", "HashBackend", "load_backend", "run_job",
]

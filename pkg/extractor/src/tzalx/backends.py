"""Embedding and captioning backends.

`hash` is a deterministic pseudo-encoder: a keyed blake2b digest of the
frame bytes (or the UTF-8 text) seeds a PCG64 draw of a unit gaussian
vector. It needs no weights, runs anywhere, and is byte-reproducible, so
it backs the format, plumbing and determinism tests and serves as a
stand-in when no checkpoints are installed. It carries no semantics:
embeddings of visually similar frames are unrelated.

`clip:<model-id-or-path>` loads a real dual encoder through
`transformers` (lazy import). Frame rows are pre-projection vision
features, label rows pre-projection text features, and the model's two
projection heads are exported so the engine starts in the true joint
space. It has no captioner of its own; pair it with `blip:<id>`, a
greedy (deterministic) image captioner.

All backends expose: embed_frames, embed_texts, projections,
caption_frame (may raise when no captioner is attached), has_captioner,
and a canonical `spec` string that reproduces the configuration.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .container import ExtractError
from .frames import Frame, decode_rgb

log = logging.getLogger("tzalx.backends")

_NORM_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# hash pseudo-encoder

class HashBackend:
    def __init__(self, vision_dim: int = 64, language_dim: int = 64,
                 embed_dim: int = 64, seed: int = 0):
        for what, v in (("vdim", vision_dim), ("ldim", language_dim),
                        ("edim", embed_dim)):
            if v < 1:
                raise ExtractError(f"hash backend {what} must be >= 1, got {v}")
        self.vision_dim = int(vision_dim)
        self.language_dim = int(language_dim)
        self.embed_dim = int(embed_dim)
        self.seed = int(seed)
        self.has_captioner = True

    @property
    def spec(self) -> str:
        return (f"hash:vdim={self.vision_dim},ldim={self.language_dim},"
                f"edim={self.embed_dim},seed={self.seed}")

    def _vector(self, data: bytes, salt: bytes, dim: int) -> np.ndarray:
        key = salt + self.seed.to_bytes(8, "little", signed=True)
        digest = hashlib.blake2b(data, digest_size=16, key=key).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(dim)
        return v / max(np.linalg.norm(v), _NORM_FLOOR)

    def embed_frames(self, frames: list[Frame]) -> np.ndarray:
        return np.vstack([self._vector(f.data, b"tzalx-vis", self.vision_dim)
                          for f in frames])

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.vstack([self._vector(t.encode("utf-8"), b"tzalx-txt",
                                       self.language_dim)
                          for t in texts])

    def projections(self) -> tuple[np.ndarray, np.ndarray]:
        return (_ortho_columns(self.vision_dim, self.embed_dim, self.seed, 1),
                _ortho_columns(self.language_dim, self.embed_dim, self.seed, 2))

    def caption_frame(self, frame: Frame) -> str:
        digest = hashlib.blake2b(frame.data, digest_size=8,
                                 key=b"tzalx-cap").hexdigest()
        return f"synthetic pattern {digest[:12]}"


def _ortho_columns(rows: int, cols: int, seed: int, stream: int) -> np.ndarray:
    rng = np.random.default_rng((seed, 0xE17AC7, stream))
    a = rng.standard_normal((rows, cols))
    if cols <= rows:
        q, r = np.linalg.qr(a)
        return q * np.sign(np.diag(r))    # sign-fixed, orthonormal columns
    return a / np.sqrt(rows)


# ---------------------------------------------------------------------------
# real models (lazy imports; constructors fail with ExtractError when the
# checkpoint or the optional dependencies are unavailable)

def _frame_to_image(frame: Frame):
    from PIL import Image
    if frame.data[:4] == b"RGB8":
        return Image.fromarray(decode_rgb(frame.data))
    import io
    try:
        img = Image.open(io.BytesIO(frame.data))
        return img.convert("RGB")
    except Exception as e:
        raise ExtractError(f"frame {frame.ident}: cannot decode image: {e}") from e


class ClipBackend:
    _BATCH = 8

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise ExtractError(
                "clip backend requires torch and transformers "
                "(pip install 'tzal-extractor[real]')") from e
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as e:
            raise ExtractError(f"cannot load clip checkpoint {model_id!r}: {e}") from e
        self._torch = torch
        self._model.eval()
        self.model_id = model_id
        self.vision_dim = int(self._model.config.vision_config.hidden_size)
        self.language_dim = int(self._model.config.text_config.hidden_size)
        self.embed_dim = int(self._model.config.projection_dim)
        self.has_captioner = False

    @property
    def spec(self) -> str:
        return f"clip:{self.model_id}"

    def embed_frames(self, frames: list[Frame]) -> np.ndarray:
        rows = []
        with self._torch.no_grad():
            for i in range(0, len(frames), self._BATCH):
                images = [_frame_to_image(f) for f in frames[i:i + self._BATCH]]
                pixels = self._processor(images=images,
                                         return_tensors="pt").pixel_values
                out = self._model.vision_model(pixel_values=pixels).pooler_output
                rows.append(out.double().numpy())
        return np.vstack(rows)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        with self._torch.no_grad():
            for i in range(0, len(texts), self._BATCH):
                tok = self._processor(text=texts[i:i + self._BATCH],
                                      return_tensors="pt", padding=True,
                                      truncation=True)
                out = self._model.text_model(
                    input_ids=tok.input_ids,
                    attention_mask=tok.attention_mask).pooler_output
                rows.append(out.double().numpy())
        return np.vstack(rows)

    def projections(self) -> tuple[np.ndarray, np.ndarray]:
        with self._torch.no_grad():
            pv = self._model.visual_projection.weight.T.double().numpy()
            pl = self._model.text_projection.weight.T.double().numpy()
        return np.array(pv), np.array(pl)

    def caption_frame(self, frame: Frame) -> str:
        raise ExtractError("clip backend has no captioner; add --captioner blip:<id>")


class BlipCaptioner:
    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import BlipForConditionalGeneration, BlipProcessor
        except ImportError as e:
            raise ExtractError(
                "blip captioner requires torch and transformers "
                "(pip install 'tzal-extractor[real]')") from e
        try:
            self._model = BlipForConditionalGeneration.from_pretrained(model_id)
            self._processor = BlipProcessor.from_pretrained(model_id)
        except Exception as e:
            raise ExtractError(f"cannot load blip checkpoint {model_id!r}: {e}") from e
        self._torch = torch
        self._model.eval()
        self.model_id = model_id

    def caption_frame(self, frame: Frame) -> str:
        inputs = self._processor(images=_frame_to_image(frame),
                                 return_tensors="pt")
        with self._torch.no_grad():
            # greedy decoding keeps identical frames mapping to identical text
            ids = self._model.generate(**inputs, max_new_tokens=30,
                                       num_beams=1, do_sample=False)
        return self._processor.decode(ids[0], skip_special_tokens=True).strip()


@dataclass
class _WithCaptioner:
    """Embedder plus an external captioner, presented as one backend."""

    embedder: object
    captioner: object

    def __getattr__(self, name):
        return getattr(self.embedder, name)

    @property
    def spec(self) -> str:
        return f"{self.embedder.spec}+{self.captioner.model_id}"

    @property
    def has_captioner(self) -> bool:
        return True

    def caption_frame(self, frame: Frame) -> str:
        return self.captioner.caption_frame(frame)


# ---------------------------------------------------------------------------
# spec parsing

MODEL_PREFIXES = ("hash", "clip:")
CAPTIONER_PREFIXES = ("blip:",)


def _parse_hash_spec(spec: str) -> HashBackend:
    kwargs = {}
    rest = spec[len("hash"):]
    if rest:
        if not rest.startswith(":"):
            raise ExtractError(f"bad hash backend spec {spec!r}")
        names = {"vdim": "vision_dim", "ldim": "language_dim",
                 "edim": "embed_dim", "seed": "seed"}
        for part in rest[1:].split(","):
            key, sep, value = part.partition("=")
            if not sep or key not in names:
                raise ExtractError(
                    f"bad hash backend option {part!r} "
                    f"(known: {', '.join(sorted(names))})")
            try:
                kwargs[names[key]] = int(value)
            except ValueError:
                raise ExtractError(f"hash backend option {key} needs an "
                                   f"integer, got {value!r}") from None
    return HashBackend(**kwargs)


def load_backend(model: str, captioner: str | None = None):
    """Resolve a model spec (and optional captioner spec) to a backend."""
    if model.startswith("hash"):
        backend = _parse_hash_spec(model)
    elif model.startswith("clip:"):
        backend = ClipBackend(model[len("clip:"):])
    else:
        raise ExtractError(
            f"unknown model {model!r} (expected hash[:opts] or clip:<id>)")
    if captioner is not None:
        if not captioner.startswith("blip:"):
            raise ExtractError(
                f"unknown captioner {captioner!r} (expected blip:<id>)")
        backend = _WithCaptioner(backend, BlipCaptioner(captioner[len("blip:"):]))
    return backend

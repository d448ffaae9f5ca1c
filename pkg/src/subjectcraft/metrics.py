"""Evaluation metrics over generated frame sequences.

All four metrics reduce to cosine similarity between embeddings from a
pluggable embedder:

* text alignment: mean cosine between each frame's embedding and the prompt's
* subject similarity: mean cosine over all (frame, target image) pairs,
  computed twice with two independent embedders (the CLIP-role and DINO-role
  slots of full-scale evaluation)
* temporal consistency: mean cosine between consecutive frame embeddings

The bundled toy embedder is a deterministic stand-in for pretrained vision
models: frames are mean-pooled to a 16-d spatial summary and pushed through a
seeded random projection; text goes through a hashed bag-of-words. Real
models plug in through the same two-method interface (see
`PrecomputedEmbedder` for an offline-vectors adapter).
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass

import numpy as np

EMBED_DIM = 32
SUMMARY_GRID = 4  # frames pool to a GRID x GRID grid of means
TEXT_BUCKETS = 16


@dataclass
class MetricReport:
    clip_t: float
    clip_i: float
    dino_i: float
    t_cons: float

    def as_dict(self) -> dict:
        return {"clip_t": self.clip_t, "clip_i": self.clip_i,
                "dino_i": self.dino_i, "t_cons": self.t_cons}

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in (self.clip_t, self.clip_i, self.dino_i, self.t_cons))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"cosine expects equal-length vectors, got {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        raise ValueError("cosine is undefined for zero vectors")
    return float(u @ v / (nu * nv))


def clip_t(frames, prompt_text: str, embedder) -> float:
    """Mean frame-to-prompt cosine."""
    if not frames:
        raise ValueError("need at least one frame")
    text_vec = embedder.embed_text(prompt_text)
    return float(np.mean([cosine(embedder.embed_image(f), text_vec) for f in frames]))


def clip_i(frames, target_images, embedder) -> float:
    """Mean cosine over the full cross product of (frame, target) pairs."""
    if not frames or not target_images:
        raise ValueError("need at least one frame and one target image")
    frame_vecs = [embedder.embed_image(f) for f in frames]
    target_vecs = [embedder.embed_image(t) for t in target_images]
    return float(np.mean([[cosine(f, t) for t in target_vecs] for f in frame_vecs]))


def dino_i(frames, target_images, embedder) -> float:
    """Same pairwise computation as `clip_i`, conventionally fed the second
    (DINO-role) embedder."""
    return clip_i(frames, target_images, embedder)


def temporal_consistency(frames, embedder) -> float:
    """Mean cosine between embeddings of consecutive frames."""
    if len(frames) < 2:
        raise ValueError("temporal_consistency needs at least 2 frames")
    vecs = [embedder.embed_image(f) for f in frames]
    return float(np.mean([cosine(vecs[i], vecs[i + 1]) for i in range(len(vecs) - 1)]))


def compute_report(frames, target_images, prompt_text: str, embedder, second_embedder) -> MetricReport:
    return MetricReport(
        clip_t=clip_t(frames, prompt_text, embedder),
        clip_i=clip_i(frames, target_images, embedder),
        dino_i=dino_i(frames, target_images, second_embedder),
        t_cons=temporal_consistency(frames, embedder),
    )


def _pool_summary(frame: np.ndarray) -> np.ndarray:
    """Mean-pool any (H, W[, C]) frame to a SUMMARY_GRID**2 vector."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=2)
    if frame.ndim != 2:
        raise ValueError(f"expected an (H, W) or (H, W, C) frame, got shape {frame.shape}")
    g = SUMMARY_GRID
    h, w = frame.shape
    if h < g:
        frame = np.repeat(frame, -(-g // h), axis=0)
    if w < g:
        frame = np.repeat(frame, -(-g // w), axis=1)
    rows = np.array_split(frame, g, axis=0)
    cells = [np.array_split(r, g, axis=1) for r in rows]
    return np.array([c.mean() for row in cells for c in row])


class ToyEmbedder:
    """Deterministic seeded embedder; unit-norm outputs for every input."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self._img_proj = rng.standard_normal((SUMMARY_GRID**2, EMBED_DIM))
        self._img_base = rng.standard_normal(EMBED_DIM)
        self._txt_proj = rng.standard_normal((TEXT_BUCKETS, EMBED_DIM))
        self._txt_base = rng.standard_normal(EMBED_DIM)

    @staticmethod
    def _normalize(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    def embed_image(self, frame) -> np.ndarray:
        summary = _pool_summary(frame)
        # Fixed base vector keeps the output nonzero even for all-black frames.
        return self._normalize(summary @ self._img_proj + self._img_base)

    def embed_text(self, text: str) -> np.ndarray:
        words = text.lower().split()
        if not words:
            raise ValueError("cannot embed an empty text")
        bag = np.zeros(TEXT_BUCKETS, dtype=np.float64)
        for word in words:
            bag[zlib.crc32(word.encode("utf-8")) % TEXT_BUCKETS] += 1.0
        return self._normalize(bag @ self._txt_proj + self._txt_base)


def toy_embedder(seed=0) -> ToyEmbedder:
    return ToyEmbedder(seed)


def frame_fingerprint(frame) -> str:
    """Stable key for precomputed-embedding lookups: sha256 over the frame's
    shape and float64 bytes."""
    frame = np.ascontiguousarray(np.asarray(frame, dtype=np.float64))
    digest = hashlib.sha256()
    digest.update(str(frame.shape).encode("ascii"))
    digest.update(frame.tobytes())
    return digest.hexdigest()


class PrecomputedEmbedder:
    """Adapter for vectors produced offline by real embedding models.

    Expects a JSON file {"images": {fingerprint: [floats]}, "texts":
    {text: [floats]}}; vectors are L2-normalized on load. Frames are looked
    up by `frame_fingerprint`.
    """

    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        self._images = {k: self._load_vec(v) for k, v in data.get("images", {}).items()}
        self._texts = {k: self._load_vec(v) for k, v in data.get("texts", {}).items()}

    @staticmethod
    def _load_vec(values) -> np.ndarray:
        vec = np.asarray(values, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if vec.ndim != 1 or norm < 1e-12:
            raise ValueError("precomputed vectors must be nonzero 1-d arrays")
        return vec / norm

    def embed_image(self, frame) -> np.ndarray:
        key = frame_fingerprint(frame)
        if key not in self._images:
            raise KeyError(f"no precomputed embedding for frame {key[:12]}...")
        return self._images[key]

    def embed_text(self, text: str) -> np.ndarray:
        if text not in self._texts:
            raise KeyError(f"no precomputed embedding for text {text!r}")
        return self._texts[text]

"""Section-wise cosine semantic similarity (CSS) between explanations."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from ifdl.data import SECTION_NAMES, ExplanationSections
from ifdl.metrics.text import tokenize

SECTION_WEIGHTS = (0.05, 0.35, 0.40, 0.15, 0.05)


class Embedder(Protocol):
    name: str

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return one fixed-length finite vector per text."""


class HashingEmbedder:
    """Signed feature-hashing bag of words; deterministic and offline."""

    name = "hashing"

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self._key = seed.to_bytes(8, "little", signed=False)

    def _slot(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, (1.0 if (v >> 63) & 1 else -1.0)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for tok in tokenize(text):
                j, sign = self._slot(tok)
                out[i, j] += sign
        return out


class SentenceTransformerEmbedder:
    """Wraps a sentence-transformers model (default all-mpnet-base-v2); loaded lazily."""

    name = "sentence-transformers"

    def __init__(self, model_name: str = "sentence-transformers/all-mpnet-base-v2"):
        self.model_name = model_name
        self._model = None

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if self._model is None:
            from sentence_transformers import SentenceTransformer

            self._model = SentenceTransformer(self.model_name)
        return np.asarray(self._model.encode(list(texts), convert_to_numpy=True), dtype=np.float64)


EMBEDDERS: dict[str, Callable[..., Embedder]] = {
    HashingEmbedder.name: HashingEmbedder,
    SentenceTransformerEmbedder.name: SentenceTransformerEmbedder,
}


def get_embedder(name: str, **kwargs) -> Embedder:
    if name not in EMBEDDERS:
        raise ValueError(f"unknown embedder {name!r}; available: {sorted(EMBEDDERS)}")
    return EMBEDDERS[name](**kwargs)


class EmbeddingError(RuntimeError):
    def __init__(self, sample_id: str, section: str, cause: Exception | str):
        super().__init__(f"sample {sample_id}: embedding failed for section {section!r}: {cause}")
        self.sample_id = sample_id
        self.section = section


@dataclass(frozen=True)
class SectionScores:
    type: float
    areas: float
    tampered_content: float
    visual_inconsistencies: float
    summary: float

    @property
    def weighted(self) -> float:
        return weighted_score(self.as_tuple())

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in SECTION_NAMES)

    def to_dict(self) -> dict[str, float]:
        d = {n: getattr(self, n) for n in SECTION_NAMES}
        d["weighted"] = self.weighted
        return d


def weighted_score(scores: Sequence[float], weights: Sequence[float] = SECTION_WEIGHTS) -> float:
    if len(scores) != len(weights):
        raise ValueError(f"{len(scores)} scores for {len(weights)} weights")
    return float(sum(w * s for w, s in zip(weights, scores)))


def css_sections(
    pred: ExplanationSections, gt: ExplanationSections, embedder: Embedder, sample_id: str = "?"
) -> SectionScores:
    """Cosine similarity per section; empty-vs-empty scores 1, empty-vs-text scores 0."""
    values = []
    for name, p, g in zip(SECTION_NAMES, pred.as_tuple(), gt.as_tuple()):
        p_empty, g_empty = not tokenize(p), not tokenize(g)
        if p_empty or g_empty:
            values.append(1.0 if p_empty and g_empty else 0.0)
            continue
        try:
            vecs = np.asarray(embedder.embed([p, g]), dtype=np.float64)
        except Exception as exc:  # provider failures surface with their sample/section
            raise EmbeddingError(sample_id, name, exc) from exc
        if vecs.shape[0] != 2 or not np.isfinite(vecs).all():
            raise EmbeddingError(sample_id, name, "embedder returned malformed vectors")
        na, nb = np.linalg.norm(vecs[0]), np.linalg.norm(vecs[1])
        if na == 0 or nb == 0:
            raise EmbeddingError(sample_id, name, "zero embedding for non-empty text")
        values.append(float(np.clip(vecs[0] @ vecs[1] / (na * nb), -1.0, 1.0)))
    return SectionScores(*values)


def mean_section_scores(scores: Sequence[SectionScores]) -> SectionScores:
    arr = np.array([s.as_tuple() for s in scores])
    return SectionScores(*(float(v) for v in arr.mean(0)))

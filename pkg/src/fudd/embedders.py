"""Text embedders usable without a vision-language model.

``LookupEmbedder`` serves precomputed text embeddings from a matrix file whose
row ids are the texts. ``HashingEmbedder`` is a deterministic bag-of-words
projection, handy for demos and tests.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .vectors import EmbeddingMatrix, read_matrix


class LookupEmbedder:
    def __init__(self, matrix: EmbeddingMatrix):
        self.matrix = matrix

    @classmethod
    def from_file(cls, path) -> "LookupEmbedder":
        return cls(read_matrix(path))

    def __call__(self, text: str) -> np.ndarray:
        if text not in self.matrix:
            raise KeyError(f"no precomputed embedding for {text!r}")
        return self.matrix[text]


_WORD = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Sum of per-word Gaussian vectors seeded from a hash of the word."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._words: dict[str, np.ndarray] = {}

    def word(self, w: str) -> np.ndarray:
        v = self._words.get(w)
        if v is None:
            h = hashlib.sha256(f"{self.seed}:{w}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
            v = self._words[w] = rng.standard_normal(self.dim)
        return v

    def __call__(self, text: str) -> np.ndarray:
        words = _WORD.findall(text.lower())
        if not words:
            raise ValueError(f"no words in {text!r}")
        return np.sum([self.word(w) for w in words], axis=0).astype(np.float32)

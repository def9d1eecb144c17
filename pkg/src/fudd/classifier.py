"""Class embeddings, nearest-class prediction and ambiguous-class detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .catalog import ClassEntry, Description
from .vectors import (
    DimensionMismatchError,
    EmbeddingMatrix,
    as_embedding,
    cosine,
    mean_embedding,
    read_matrix,
    write_matrix,
)

TextEmbedder = Callable[[str], np.ndarray]


class EmbedderError(RuntimeError):
    def __init__(self, text: str, cause: Exception):
        self.text = text
        super().__init__(f"text embedder failed on {text!r}: {cause}")


def embed_text(text: str, embedder: TextEmbedder) -> np.ndarray:
    try:
        return as_embedding(embedder(text))
    except Exception as exc:
        raise EmbedderError(text, exc) from exc


def embed_descriptions(descriptions: Iterable[Description | str], embedder: TextEmbedder) -> np.ndarray:
    """Mean text embedding, summed in lexicographic order of the texts."""
    texts = sorted(d.text if isinstance(d, Description) else d for d in descriptions)
    if not texts:
        raise ValueError("no descriptions to embed")
    return mean_embedding([embed_text(t, embedder) for t in texts])


def class_embedding(entry: ClassEntry, text_embedder: TextEmbedder) -> np.ndarray:
    if not entry.descriptions:
        raise ValueError(f"class {entry.class_id!r} has no descriptions")
    return embed_descriptions(entry.descriptions, text_embedder)


@dataclass(frozen=True)
class ClassEmbeddingTable:
    class_ids: tuple[str, ...]
    matrix: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        order = sorted(range(len(self.class_ids)), key=lambda i: self.class_ids[i])
        ids = tuple(self.class_ids[i] for i in order)
        m = EmbeddingMatrix(np.asarray(self.matrix, dtype=np.float32)[order], ids)
        object.__setattr__(self, "class_ids", m.row_ids)
        object.__setattr__(self, "matrix", m.rows)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self):
        return len(self.class_ids)

    def __getitem__(self, class_id: str) -> np.ndarray:
        return self.matrix[self.class_ids.index(class_id)]

    @classmethod
    def from_mapping(cls, entries: Mapping[str, np.ndarray], provenance: str = "") -> "ClassEmbeddingTable":
        ids = sorted(entries)
        if not ids:
            raise ValueError("a class table needs at least one class")
        return cls(tuple(ids), np.stack([as_embedding(entries[i]) for i in ids]), provenance)

    def restrict(self, class_ids: Iterable[str]) -> "ClassEmbeddingTable":
        keep = sorted(set(class_ids))
        return ClassEmbeddingTable(tuple(keep), np.stack([self[c] for c in keep]), self.provenance)

    def to_matrix(self) -> EmbeddingMatrix:
        return EmbeddingMatrix(self.matrix, self.class_ids)


def build_table(entries: Sequence[ClassEntry], text_embedder: TextEmbedder, provenance: str = "") -> ClassEmbeddingTable:
    return ClassEmbeddingTable.from_mapping(
        {e.class_id: class_embedding(e, text_embedder) for e in entries}, provenance
    )


def save_table(table: ClassEmbeddingTable, path) -> None:
    write_matrix(table.to_matrix(), path)


def load_table(path, provenance: str = "") -> ClassEmbeddingTable:
    m = read_matrix(path)
    return ClassEmbeddingTable(m.row_ids, m.rows, provenance)


def scores(image, table: ClassEmbeddingTable) -> dict[str, float]:
    image = as_embedding(image)
    if image.shape[0] != table.dim:
        raise DimensionMismatchError(f"image dim {image.shape[0]} vs class dim {table.dim}")
    return {cid: cosine(image, table.matrix[i]) for i, cid in enumerate(table.class_ids)}


def rank(score_map: Mapping[str, float]) -> list[str]:
    """Class ids by descending score, ties by ascending id."""
    return sorted(score_map, key=lambda c: (-score_map[c], c))


def predict(image, table: ClassEmbeddingTable) -> tuple[str, dict[str, float]]:
    s = scores(image, table)
    return rank(s)[0], s


@dataclass(frozen=True)
class AmbiguousSet:
    image_id: str
    members: tuple[str, ...]
    k: int


def ambiguous_set(image, table: ClassEmbeddingTable, k: int, image_id: str = "") -> AmbiguousSet:
    """The ``k`` most similar classes, most similar first.

    The best k-subset under a summed-similarity objective is exactly the
    per-class top-k, so no subset search is needed.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    return AmbiguousSet(image_id, tuple(rank(scores(image, table))[:k]), k)


def ambiguous_from_scores(score_map: Mapping[str, float], k: int, image_id: str = "") -> AmbiguousSet:
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    return AmbiguousSet(image_id, tuple(rank(score_map)[:k]), k)

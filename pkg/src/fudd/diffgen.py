"""Pairwise differential descriptions: prompts, response parsing and set assembly."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .catalog import Description, Source, load_lines, single_template
from .classifier import TextEmbedder, embed_text
from .prompts import PromptMessages, build_prompt, load_exchanges
from .vectors import mean_embedding

log = logging.getLogger(__name__)

PAIR_INSTRUCTION = (
    "For the following objects, generate captions that represent the distinguishing visual "
    "differences between the photos of the two objects. Generate as many captions as you can."
)
BASE_PREFIXES = ("a photo of a", "a photo of an", "a photo of the")


def pair_query(name_1: str, name_2: str) -> str:
    return f"{PAIR_INSTRUCTION}\nObject 1: {name_1}\nObject 2: {name_2}"


def build_pair_prompt(name_1: str, name_2: str, examples: Sequence[dict] | None = None) -> PromptMessages:
    """Prompt asking for captions that separate ``name_1`` (Object 1) from ``name_2``.

    ``examples`` hold ``object_1``, ``object_2`` and ``response``; the packaged
    exchanges are used when omitted.
    """
    if not name_1 or not name_2:
        raise ValueError("class names must be non-empty")
    if name_1 == name_2:
        raise ValueError(f"cannot contrast {name_1!r} with itself")
    if examples is None:
        examples = load_exchanges(default="pair_examples.json")
    exchanges = [(pair_query(ex["object_1"], ex["object_2"]), ex["response"]) for ex in examples]
    return build_prompt(pair_query(name_1, name_2), exchanges)


_OBJECTS = re.compile(r"^Object 1: (.*)\nObject 2: (.*)\Z", re.M)


def names_from_pair_query(query: str) -> tuple[str, str] | None:
    m = _OBJECTS.search(query)
    return (m.group(1), m.group(2)) if m else None


@dataclass(frozen=True)
class DifferentialRecord:
    attribute: str
    caption_1: str
    caption_2: str

    def __post_init__(self):
        if not (self.attribute and self.caption_1 and self.caption_2):
            raise ValueError("differential records need an attribute and both captions")

    def swapped(self) -> "DifferentialRecord":
        return DifferentialRecord(self.attribute, self.caption_2, self.caption_1)


_KEY = re.compile(r"^\s*(visual characteristic|caption 1|caption 2)\s*:\s*(.*?)\s*$", re.I)
_FIELDS = {"visual characteristic": "attribute", "caption 1": "caption_1", "caption 2": "caption_2"}


def parse_differential_response(text: str) -> tuple[list[DifferentialRecord], int]:
    """Scan ``text`` for attribute/caption blocks.

    Returns the complete blocks in order and the number of blocks that were
    started but never completed. Lines that are not block keys are ignored.
    """
    records: list[DifferentialRecord] = []
    skipped = 0
    block: dict[str, str] | None = None

    def close():
        nonlocal skipped
        if block is None:
            return
        if len(block) == 3 and all(block.values()):
            records.append(DifferentialRecord(**block))
        else:
            skipped += 1

    for line in text.splitlines():
        m = _KEY.match(line)
        if not m:
            continue
        name = _FIELDS[m.group(1).lower()]
        value = m.group(2)
        if name == "attribute":
            close()
            block = {"attribute": value}
        elif block is None or name in block:
            # a caption with no open block, or a repeated caption, starts a fresh (attribute-less) block
            close()
            block = {name: value}
        else:
            block[name] = value
    close()
    return records, skipped


def render_records(records: Iterable[DifferentialRecord]) -> str:
    return "".join(
        f"Visual characteristic: {r.attribute}\nCaption 1: {r.caption_1}\nCaption 2: {r.caption_2}\n\n"
        for r in records
    )


def pairwise_sets(records: Sequence[DifferentialRecord], c1=None, c2=None) -> tuple[list[Description], list[Description]]:
    """Split records for the ordered pair (Object 1, Object 2) into per-class description lists."""
    first = [Description(r.caption_1, Source.DIFFERENTIAL, r.attribute) for r in records]
    second = [Description(r.caption_2, Source.DIFFERENTIAL, r.attribute) for r in records]
    return first, second


@dataclass(frozen=True)
class PairwiseDescriptions:
    """Descriptions for ``class_1`` against ``class_2``; ``caption_1`` belongs to ``class_1``.

    A ``fallback`` pair has no records and describes each class with its
    single-template sentence.
    """

    class_1: str
    class_2: str
    records: tuple[DifferentialRecord, ...] = ()
    name_1: str = ""
    name_2: str = ""
    fallback: bool = False
    skipped_blocks: int = 0

    def __post_init__(self):
        if self.class_1 == self.class_2:
            raise ValueError(f"a pair needs two distinct classes, got {self.class_1!r} twice")

    def reversed(self) -> "PairwiseDescriptions":
        return PairwiseDescriptions(
            self.class_2,
            self.class_1,
            tuple(r.swapped() for r in self.records),
            self.name_2,
            self.name_1,
            self.fallback,
            self.skipped_blocks,
        )

    def descriptions_for(self, class_id: str) -> list[Description]:
        if class_id not in (self.class_1, self.class_2):
            raise KeyError(class_id)
        if self.fallback:
            return [single_template(self.name_1 if class_id == self.class_1 else self.name_2)]
        first, second = pairwise_sets(self.records)
        return first if class_id == self.class_1 else second


PairLookup = Callable[[str, str], PairwiseDescriptions]


def assemble_differential_set(c: str, members: Sequence[str], pairs: PairLookup) -> list[Description]:
    """Union of ``c``'s pairwise descriptions against every other member, deduplicated by text.

    ``pairs(c, other)`` resolves one pair (typically through the pair cache).
    The result is sorted by text so it does not depend on member order.
    """
    members = list(members)
    if c not in members:
        raise ValueError(f"{c!r} is not in the ambiguous set {members}")
    by_text: dict[str, Description] = {}
    for other in sorted(set(members) - {c}):
        for d in pairs(c, other).descriptions_for(c):
            by_text.setdefault(d.text, d)
    return [by_text[t] for t in sorted(by_text)]


def attribute_similar(a1: str, a2: str, mode: str = "strict") -> bool:
    """``strict``: the attributes share a word. ``relaxed``: the whole strings match."""
    if mode == "strict":
        return bool(set(a1.lower().split()) & set(a2.lower().split()))
    if mode == "relaxed":
        return a1.strip().lower() == a2.strip().lower()
    raise ValueError(f"unknown similarity mode {mode!r}")


def non_differential_set(
    c: str,
    all_descriptions: Sequence[Description],
    differential: Sequence[Description],
    mode: str = "strict",
) -> list[Description]:
    """Descriptions of ``c`` whose attribute resembles none of the differential attributes."""
    for d in (*all_descriptions, *differential):
        if not d.attribute:
            raise ValueError(f"description {d.text!r} of class {c!r} has no attribute")
    used = {d.attribute for d in differential}
    return [
        Description(d.text, Source.NON_DIFFERENTIAL, d.attribute)
        for d in all_descriptions
        if not any(attribute_similar(d.attribute, u, mode) for u in used)
    ]


def load_prefixes(path=None) -> list[str]:
    return load_lines(path, default="clip_prefixes.txt")


def _match_prefix(text: str, recognized: Iterable[str]) -> str | None:
    lower = text.lower()
    for p in sorted(set(recognized), key=len, reverse=True):
        if lower.startswith(p.lower()) and len(text) > len(p) and text[len(p)] == " ":
            return text[: len(p)]
    return None


def augment_descriptions(
    d: Description, prefixes: Sequence[str], recognized: Iterable[str] | None = None
) -> list[Description]:
    """One variant of ``d`` per prefix, swapping its leading prefix.

    The leading prefix is found among ``recognized`` (default: ``prefixes``),
    longest match first and case-insensitively. Replacements copy the
    capitalisation of the original's first letter, so the variant for the
    original prefix reproduces ``d.text``.
    """
    original = _match_prefix(d.text, prefixes if recognized is None else recognized)
    if original is None:
        raise ValueError(f"no recognised prefix at the start of {d.text!r}")
    rest = d.text[len(original):]
    out = []
    for p in prefixes:
        if p.lower() == original.lower():
            p = original
        elif original[:1].isupper():
            p = p[:1].upper() + p[1:]
        out.append(Description(p + rest, Source.AUGMENTED, d.attribute))
    return out


def augmented_embedding(
    d: Description,
    prefixes: Sequence[str],
    text_embedder: TextEmbedder,
    recognized: Iterable[str] | None = None,
) -> np.ndarray:
    variants = augment_descriptions(d, prefixes, recognized)
    return mean_embedding([embed_text(v.text, text_embedder) for v in variants])

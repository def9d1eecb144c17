"""Classes, their descriptions, baseline description builders and dataset manifests."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .prompts import PromptMessages, build_prompt, load_exchanges
from .vectors import MatrixFormatError, read_matrix

PAIR_SEPARATOR = "||"
PLACEHOLDER = "{}"
SINGLE_TEMPLATE_PREFIX = "A photo of a "
NAIVE_QUERY = "What are useful features for distinguishing a {} in a photo?"


class Source(str, enum.Enum):
    SINGLE_TEMPLATE = "single_template"
    TEMPLATE_SET = "template_set"
    NAIVE_LLM = "naive_llm"
    DIFFERENTIAL = "differential"
    NON_DIFFERENTIAL = "non_differential"
    AUGMENTED = "augmented"


_ATTRIBUTE_SOURCES = {Source.DIFFERENTIAL, Source.NON_DIFFERENTIAL}


@dataclass(frozen=True)
class Description:
    text: str
    source: Source
    attribute: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "source", Source(self.source))
        if not self.text:
            raise ValueError("description text must be non-empty")
        needs = self.source in _ATTRIBUTE_SOURCES
        if needs and not self.attribute:
            raise ValueError(f"{self.source.value} description {self.text!r} needs an attribute")
        if not needs and self.attribute is not None and self.source is not Source.AUGMENTED:
            raise ValueError(f"{self.source.value} descriptions carry no attribute")

    def to_json(self) -> dict:
        out = {"text": self.text, "source": self.source.value}
        if self.attribute is not None:
            out["attribute"] = self.attribute
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Description":
        return cls(obj["text"], Source(obj["source"]), obj.get("attribute"))


@dataclass(frozen=True)
class ClassEntry:
    class_id: str
    display_name: str
    descriptions: tuple[Description, ...] = ()

    def with_descriptions(self, descriptions: Sequence[Description]) -> "ClassEntry":
        return replace(self, descriptions=tuple(descriptions))


def single_template(display_name: str) -> Description:
    if not display_name:
        raise ValueError("class name must be non-empty")
    return Description(f"{SINGLE_TEMPLATE_PREFIX}{display_name}.", Source.SINGLE_TEMPLATE)


def template_set(display_name: str, templates: Sequence[str]) -> list[Description]:
    if not display_name:
        raise ValueError("class name must be non-empty")
    out = []
    for t in templates:
        if t.count(PLACEHOLDER) != 1:
            raise ValueError(f"template {t!r} must contain exactly one {PLACEHOLDER} placeholder")
        out.append(Description(t.replace(PLACEHOLDER, display_name), Source.TEMPLATE_SET))
    return out


def load_lines(path=None, *, default: str) -> list[str]:
    """Non-blank lines of a data file; the packaged ``default`` when ``path`` is None."""
    if path is None:
        text = resources.files("fudd.data").joinpath(default).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return [ln.rstrip("\r") for ln in text.split("\n") if ln.strip()]


def load_templates(path=None) -> list[str]:
    return load_lines(path, default="clip_templates.txt")


def naive_llm_prompt(display_name: str, examples: Sequence[dict] | None = None) -> PromptMessages:
    """Attribute-listing prompt in the style of prior LLM-description work.

    ``examples`` are dicts with ``name`` and ``response``; the packaged
    exchanges are used when omitted.
    """
    if not display_name:
        raise ValueError("class name must be non-empty")
    if examples is None:
        examples = load_exchanges(default="naive_examples.json")
    exchanges = [(NAIVE_QUERY.format(ex["name"]), ex["response"]) for ex in examples]
    return build_prompt(NAIVE_QUERY.format(display_name), exchanges)


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


def parse_naive_response(display_name: str, text: str) -> list[Description]:
    """Turn a bulleted feature list into ``"<name>, which (is/has/etc) <feature>."``."""
    out, seen = [], set()
    for line in text.splitlines():
        m = _BULLET.match(line)
        if not m:
            continue
        feature = m.group(1).rstrip(".")
        desc = f"{display_name}, which (is/has/etc) {feature}."
        if desc not in seen:
            seen.add(desc)
            out.append(Description(desc, Source.NAIVE_LLM))
    return out


@dataclass
class DatasetManifest:
    name: str
    classes: list[ClassEntry]
    image_embeddings: Path
    labels: dict[str, str]
    root: Path = field(default_factory=Path)

    @property
    def class_ids(self) -> list[str]:
        return sorted(c.class_id for c in self.classes)

    def entry(self, class_id: str) -> ClassEntry:
        for c in self.classes:
            if c.class_id == class_id:
                return c
        raise KeyError(class_id)

    @property
    def embeddings_path(self) -> Path:
        p = Path(self.image_embeddings)
        return p if p.is_absolute() else self.root / p

    def load_images(self):
        return read_matrix(self.embeddings_path)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "image_embeddings": str(self.image_embeddings),
            "classes": [
                {
                    "class_id": c.class_id,
                    "display_name": c.display_name,
                    "descriptions": [d.to_json() for d in c.descriptions],
                }
                for c in self.classes
            ],
            "labels": dict(sorted(self.labels.items())),
        }


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.subject}: {self.detail}"


class ManifestError(ValueError):
    def __init__(self, path, violations: Sequence[Violation]):
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"{path}: {len(self.violations)} manifest violation(s)\n  {lines}")


def _parse_manifest(obj: dict, root: Path) -> DatasetManifest:
    classes = []
    for c in obj["classes"]:
        descs = tuple(Description.from_json(d) for d in c.get("descriptions", ()))
        classes.append(ClassEntry(str(c["class_id"]), str(c["display_name"]), descs))
    labels = {str(k): str(v) for k, v in obj["labels"].items()}
    return DatasetManifest(str(obj["name"]), classes, Path(obj["image_embeddings"]), labels, root)


def load_manifest(path, *, validate: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text("utf-8"))
        m = _parse_manifest(obj, path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(path, [Violation("schema", str(path), str(exc))]) from exc
    if validate:
        problems = validate_manifest(m)
        if problems:
            raise ManifestError(path, problems)
    return m


def save_manifest(m: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(m.to_json(), indent=2, ensure_ascii=False) + "\n", "utf-8")


def validate_manifest(m: DatasetManifest) -> list[Violation]:
    """Every referential-integrity problem in ``m``; empty when the manifest is sound."""
    out: list[Violation] = []
    seen: set[str] = set()
    for c in m.classes:
        if not c.class_id:
            out.append(Violation("empty_class_id", repr(c.display_name), "class_id is empty"))
        elif c.class_id in seen:
            out.append(Violation("duplicate_class_id", c.class_id, "class_id appears more than once"))
        elif PAIR_SEPARATOR in c.class_id:
            out.append(Violation("reserved_separator", c.class_id, f"class_id contains {PAIR_SEPARATOR!r}"))
        seen.add(c.class_id)
        if not c.display_name:
            out.append(Violation("empty_display_name", c.class_id, "display_name is empty"))

    for image_id, class_id in sorted(m.labels.items()):
        if class_id not in seen:
            out.append(Violation("unknown_class", image_id, f"label {class_id!r} is not a known class"))

    path = m.embeddings_path
    if not path.exists():
        out.append(Violation("missing_embedding_file", str(path), "embedding file does not exist"))
        return out
    try:
        images = read_matrix(path)
    except MatrixFormatError as exc:
        out.append(Violation("unreadable_embedding_file", str(path), str(exc)))
        return out
    for image_id in sorted(m.labels):
        if image_id not in images:
            out.append(Violation("dangling_image", image_id, "no row with this id in the embedding file"))
    return out

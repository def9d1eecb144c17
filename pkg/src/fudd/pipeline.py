"""End-to-end classification: baselines, follow-up differential classification,
evaluation reports, the k sweep and the non-differential ablation."""

from __future__ import annotations

import enum
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import ClassEntry, DatasetManifest, Description, Source, single_template, template_set
from .classifier import (
    AmbiguousSet,
    ClassEmbeddingTable,
    TextEmbedder,
    ambiguous_from_scores,
    embed_text,
    rank,
    scores,
)
from .diffgen import BASE_PREFIXES, assemble_differential_set, augment_descriptions, non_differential_set
from .gateway import Gateway, pair_key
from .vectors import EmbeddingMatrix, mean_embedding


class Method(str, enum.Enum):
    SINGLE_TEMPLATE = "single_template"
    TEMPLATE_SET = "template_set"
    NAIVE_LLM = "naive_llm"
    FUDD = "fudd"
    FUDD_NON_DIFFERENTIAL = "fudd_non_differential"


BASELINES = (Method.SINGLE_TEMPLATE, Method.TEMPLATE_SET, Method.NAIVE_LLM)


class PipelineError(RuntimeError):
    def __init__(self, image_id: str, cause: Exception):
        self.image_id = image_id
        super().__init__(f"image {image_id!r}: {cause}")


class EvaluationError(RuntimeError):
    def __init__(self, message: str, partial: "EvalReport"):
        self.partial = partial
        super().__init__(message)


class EmptyPoolError(ValueError):
    def __init__(self, class_id: str):
        self.class_id = class_id
        super().__init__(f"no non-differential descriptions left for class {class_id!r}")


@dataclass
class PredictionTrace:
    image_id: str
    first_pass_scores: dict[str, float]
    ambiguous: AmbiguousSet
    final_label: str
    method: Method
    followup_scores: dict[str, float] | None = None
    pair_skips: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "method": self.method.value,
            "final_label": self.final_label,
            "ambiguous": list(self.ambiguous.members),
            "k": self.ambiguous.k,
            "first_pass_scores": self.first_pass_scores,
            "followup_scores": self.followup_scores,
        }


class DescriptionEncoder:
    """Turns description lists into class embeddings, memoising per-text work.

    With ``augment`` each description is replaced by the mean embedding of its
    prefix variants before averaging.
    """

    def __init__(self, embedder: TextEmbedder, augment: bool = False, prefixes: Sequence[str] | None = None,
                 recognized: Iterable[str] = BASE_PREFIXES):
        if augment and not prefixes:
            raise ValueError("augmentation needs a prefix list")
        self.embedder = embedder
        self.augment = augment
        self.prefixes = list(prefixes or ())
        self.recognized = tuple(recognized)
        self._text: dict[str, np.ndarray] = {}
        self._desc: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def text(self, t: str) -> np.ndarray:
        v = self._text.get(t)
        if v is None:
            v = embed_text(t, self.embedder)
            with self._lock:
                self._text.setdefault(t, v)
        return v

    def description(self, d: Description) -> np.ndarray:
        if not self.augment:
            return self.text(d.text)
        v = self._desc.get(d.text)
        if v is None:
            variants = augment_descriptions(d, self.prefixes, self.recognized)
            v = mean_embedding([self.text(x.text) for x in variants])
            with self._lock:
                self._desc.setdefault(d.text, v)
        return v

    def encode(self, descriptions: Sequence[Description]) -> np.ndarray:
        by_text = {d.text: d for d in descriptions}
        if not by_text:
            raise ValueError("no descriptions to encode")
        return mean_embedding([self.description(by_text[t]) for t in sorted(by_text)])


def base_descriptions(entry: ClassEntry, method: Method | str, *, templates: Sequence[str] | None = None,
                      gateway: Gateway | None = None) -> list[Description]:
    method = Method(method)
    if method is Method.SINGLE_TEMPLATE:
        return [single_template(entry.display_name)]
    if method is Method.TEMPLATE_SET:
        if templates is None:
            raise ValueError("template_set needs a template list")
        return template_set(entry.display_name, templates)
    if method is Method.NAIVE_LLM:
        stored = [d for d in entry.descriptions if d.source is Source.NAIVE_LLM]
        if stored:
            return stored
        if gateway is None:
            raise ValueError(f"class {entry.class_id!r} has no naive descriptions and no gateway was given")
        out = gateway.naive(entry.class_id)
        if not out:
            raise ValueError(f"naive response for {entry.class_id!r} contained no features")
        return out
    raise ValueError(f"{method.value} is not a base description source")


def build_base_table(classes: Sequence[ClassEntry], method: Method | str, embedder: TextEmbedder | DescriptionEncoder,
                     *, templates=None, gateway=None) -> ClassEmbeddingTable:
    enc = embedder if isinstance(embedder, DescriptionEncoder) else DescriptionEncoder(embedder)
    return ClassEmbeddingTable.from_mapping(
        {c.class_id: enc.encode(base_descriptions(c, method, templates=templates, gateway=gateway)) for c in classes},
        Method(method).value,
    )


def followup_scores(image, pools: Mapping[str, Sequence[Description]], encoder: DescriptionEncoder) -> dict[str, float]:
    """Cosine scores of ``image`` against class embeddings rebuilt from ``pools``."""
    table = ClassEmbeddingTable.from_mapping({c: encoder.encode(pool) for c, pool in pools.items()})
    return scores(image, table)


def _collect_pairs(members: Sequence[str], gateway: Gateway, skips: dict[str, int]):
    # resolve every pair once in canonical orientation so generation order never depends on call order
    for a, b in combinations(sorted(members), 2):
        skips[pair_key(a, b)] = gateway.pair(a, b).skipped_blocks


def differential_pools(members: Sequence[str], gateway: Gateway, entries: Mapping[str, ClassEntry],
                       skips: dict[str, int], mix_base: bool = False) -> dict[str, list[Description]]:
    _collect_pairs(members, gateway, skips)
    pools = {}
    for c in members:
        pool = assemble_differential_set(c, members, gateway.pair)
        if mix_base:
            pool = pool + [single_template(entries[c].display_name)]
        pools[c] = pool or [single_template(entries[c].display_name)]
    return pools


def fudd_classify(image, classes: Sequence[ClassEntry], base_table: ClassEmbeddingTable, k: int,
                  gateway: Gateway | None, embedder: TextEmbedder | DescriptionEncoder, *, augment: bool = False,
                  prefixes: Sequence[str] | None = None, mix_base: bool = False,
                  image_id: str = "") -> PredictionTrace:
    """Classify once with the base table, then again among the ``k`` most ambiguous
    classes using their differential descriptions."""
    try:
        first = scores(image, base_table)
        amb = ambiguous_from_scores(first, k, image_id)
        trace = PredictionTrace(image_id, first, amb, amb.members[0], Method.FUDD)
        if len(amb.members) < 2:
            return trace
        if gateway is None:
            raise ValueError("follow-up classification needs a gateway")
        enc = embedder if isinstance(embedder, DescriptionEncoder) else DescriptionEncoder(embedder, augment, prefixes)
        entries = {c.class_id: c for c in classes}
        pools = differential_pools(amb.members, gateway, entries, trace.pair_skips, mix_base)
        trace.followup_scores = followup_scores(image, pools, enc)
        trace.final_label = rank(trace.followup_scores)[0]
        return trace
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(image_id, exc) from exc


def non_differential_pools(members: Sequence[str], all_classes: Sequence[str], gateway: Gateway,
                           entries: Mapping[str, ClassEntry], skips: dict[str, int],
                           mode: str = "strict") -> dict[str, list[Description]]:
    """Per member: descriptions from every pair involving it whose attribute matches
    none of the attributes in its differential set for ``members``."""
    _collect_pairs(all_classes, gateway, skips)
    pools = {}
    for c in members:
        diff = assemble_differential_set(c, members, gateway.pair)
        everything = assemble_differential_set(c, all_classes, gateway.pair)
        pool = non_differential_set(c, everything, diff, mode)
        if not pool:
            raise EmptyPoolError(c)
        pools[c] = pool
    return pools


@dataclass
class EvalReport:
    dataset: str
    method: str
    k: int
    accuracy: float
    n_images: int
    n_correct: int
    per_class_accuracy: dict[str, float]
    per_class_counts: dict[str, int]
    backend_calls: int = 0
    skipped_parse_blocks: int = 0
    n_failed: int = 0
    augment: bool = False
    traces: list[PredictionTrace] = field(default_factory=list, repr=False, compare=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("traces")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def summarize(dataset: str, method: str, k: int, labels: Mapping[str, str], traces: Sequence[PredictionTrace | None],
              image_ids: Sequence[str], *, backend_calls: int = 0, augment: bool = False) -> EvalReport:
    """Accuracy report over ``image_ids``; a ``None`` trace counts as a wrong answer."""
    correct = 0
    per_total: dict[str, int] = {}
    per_correct: dict[str, int] = {}
    skips: dict[str, int] = {}
    failed = 0
    for image_id, tr in zip(image_ids, traces):
        truth = labels[image_id]
        per_total[truth] = per_total.get(truth, 0) + 1
        if tr is None:
            failed += 1
            continue
        skips.update(tr.pair_skips)
        if tr.final_label == truth:
            correct += 1
            per_correct[truth] = per_correct.get(truth, 0) + 1
    n = len(image_ids)
    return EvalReport(
        dataset=dataset,
        method=method,
        k=k,
        accuracy=correct / n if n else 0.0,
        n_images=n,
        n_correct=correct,
        per_class_accuracy={c: per_correct.get(c, 0) / per_total[c] for c in sorted(per_total)},
        per_class_counts=dict(sorted(per_total.items())),
        backend_calls=backend_calls,
        skipped_parse_blocks=sum(skips.values()),
        n_failed=failed,
        augment=augment,
        traces=[t for t in traces if t is not None],
    )


def evaluate(manifest: DatasetManifest, method: Method | str, embedder: TextEmbedder, *, k: int = 1,
             gateway: Gateway | None = None, templates: Sequence[str] | None = None, augment: bool = False,
             prefixes: Sequence[str] | None = None, base_method: Method | str = Method.SINGLE_TEMPLATE,
             mix_base: bool = False, similarity_mode: str = "strict", parallelism: int = 1,
             skip_errors: bool = False, images: EmbeddingMatrix | None = None,
             encoder: DescriptionEncoder | None = None) -> EvalReport:
    """Classify every labelled image with ``method`` and report accuracy.

    Images are independent; with ``parallelism > 1`` they run on a thread pool
    and results are merged in image-id order, so reports do not depend on the
    thread count. A failing image aborts the run (with the partial report on
    the exception) unless ``skip_errors`` is set, in which case it is counted
    as wrong and tallied in ``n_failed``.
    """
    method = Method(method)
    images = images if images is not None else manifest.load_images()
    classes = sorted(manifest.classes, key=lambda c: c.class_id)
    all_ids = [c.class_id for c in classes]
    if not 1 <= k:
        raise ValueError(f"k must be positive, got {k}")
    enc = encoder or DescriptionEncoder(embedder, augment, prefixes)
    calls_before = gateway.stats.backend_calls if gateway is not None else 0

    if method in BASELINES:
        table = build_base_table(classes, method, enc if not augment else DescriptionEncoder(embedder),
                                 templates=templates, gateway=gateway)
    else:
        table = build_base_table(classes, base_method, DescriptionEncoder(embedder), templates=templates,
                                 gateway=gateway)
    entries = {c.class_id: c for c in classes}

    def classify(image_id: str) -> PredictionTrace:
        x = images[image_id]
        if method in BASELINES:
            try:
                first = scores(x, table)
            except Exception as exc:
                raise PipelineError(image_id, exc) from exc
            amb = ambiguous_from_scores(first, min(k, len(first)), image_id)
            return PredictionTrace(image_id, first, amb, amb.members[0], method)
        if method is Method.FUDD:
            return fudd_classify(x, classes, table, k, gateway, enc, mix_base=mix_base, image_id=image_id)
        # non-differential arm
        try:
            first = scores(x, table)
            amb = ambiguous_from_scores(first, k, image_id)
            trace = PredictionTrace(image_id, first, amb, amb.members[0], method)
            if len(amb.members) < 2:
                return trace
            pools = non_differential_pools(amb.members, all_ids, gateway, entries, trace.pair_skips,
                                           similarity_mode)
            trace.followup_scores = followup_scores(x, pools, enc)
            trace.final_label = rank(trace.followup_scores)[0]
            return trace
        except Exception as exc:
            raise PipelineError(image_id, exc) from exc

    image_ids = sorted(manifest.labels)
    results: list[PredictionTrace | None] = [None] * len(image_ids)
    errors: list[tuple[int, Exception]] = []

    def run(i: int):
        try:
            results[i] = classify(image_ids[i])
        except PipelineError as exc:
            errors.append((i, exc))

    if parallelism <= 1:
        for i in range(len(image_ids)):
            run(i)
            if errors and not skip_errors:
                break
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run, range(len(image_ids))))

    calls = (gateway.stats.backend_calls - calls_before) if gateway is not None else 0
    if errors and not skip_errors:
        errors.sort(key=lambda e: e[0])
        done = [i for i, r in enumerate(results) if r is not None]
        partial = summarize(manifest.name, method.value, k, manifest.labels, [results[i] for i in done],
                            [image_ids[i] for i in done], backend_calls=calls, augment=augment)
        raise EvaluationError(f"{len(errors)} image(s) failed; first: {errors[0][1]}", partial) from errors[0][1]
    return summarize(manifest.name, method.value, k, manifest.labels, results, image_ids,
                     backend_calls=calls, augment=augment)


def sweep_k(manifest: DatasetManifest, ks: Sequence[int], embedder: TextEmbedder, **kwargs) -> list[EvalReport]:
    """One FuDD evaluation per ``k``; all runs share the gateway and an embedding memo."""
    if not ks:
        raise ValueError("ks must not be empty")
    n = len(manifest.classes)
    for k in ks:
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside 1..{n}")
    kwargs.setdefault("encoder", DescriptionEncoder(embedder, kwargs.get("augment", False), kwargs.get("prefixes")))
    return [evaluate(manifest, Method.FUDD, embedder, k=k, **kwargs) for k in ks]


def ablation_non_differential(manifest: DatasetManifest, k: int, embedder: TextEmbedder, *, prefixes: Sequence[str],
                              similarity_mode: str = "strict", **kwargs) -> tuple[EvalReport, EvalReport]:
    """Differential vs non-differential follow-up descriptions, both augmented with ``prefixes``."""
    kwargs.pop("augment", None)
    enc = DescriptionEncoder(embedder, True, prefixes)
    diff = evaluate(manifest, Method.FUDD, embedder, k=k, augment=True, prefixes=prefixes, encoder=enc, **kwargs)
    non_diff = evaluate(manifest, Method.FUDD_NON_DIFFERENTIAL, embedder, k=k, augment=True, prefixes=prefixes,
                        similarity_mode=similarity_mode, encoder=enc, **kwargs)
    return diff, non_diff


def write_report(report: EvalReport, path, *, traces_path=None) -> None:
    Path(path).write_text(report.dumps(), "utf-8")
    if traces_path is not None:
        with open(traces_path, "w", encoding="utf-8") as f:
            for t in report.traces:
                f.write(json.dumps(t.to_json(), sort_keys=True) + "\n")


def read_report(path) -> EvalReport:
    return EvalReport(**json.loads(Path(path).read_text("utf-8")))


def format_table(reports: Sequence[EvalReport]) -> str:
    head = ("dataset", "method", "k", "accuracy", "images", "calls", "skipped")
    rows = [(r.dataset, r.method, str(r.k), f"{100 * r.accuracy:.2f}", str(r.n_images), str(r.backend_calls),
             str(r.skipped_parse_blocks)) for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = lambda cells: "  ".join(c.rjust(w) if i >= 2 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


def plot_data(reports: Sequence[EvalReport]) -> str:
    """Tab-separated ``k`` / ``accuracy`` rows for an accuracy-vs-k plot."""
    return "k\taccuracy\n" + "".join(f"{r.k}\t{r.accuracy!r}\n" for r in reports)


def recompose_accuracy(report: EvalReport) -> Fraction:
    """Accuracy rebuilt from the per-class breakdown, as an exact fraction."""
    total = sum(report.per_class_counts.values())
    hits = sum(Fraction(report.per_class_accuracy[c]).limit_denominator(n) * n
               for c, n in report.per_class_counts.items())
    return hits / total

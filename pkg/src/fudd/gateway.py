"""Chat-completion backends, retries, the pairwise-description cache and cost estimates."""

from __future__ import annotations

import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .catalog import ClassEntry, DatasetManifest, PAIR_SEPARATOR, naive_llm_prompt, parse_naive_response
from .classifier import ClassEmbeddingTable, ambiguous_set
from .diffgen import (
    DifferentialRecord,
    PairwiseDescriptions,
    build_pair_prompt,
    names_from_pair_query,
    parse_differential_response,
    render_records,
)
from .prompts import PromptMessages
from .store import JsonlStore

log = logging.getLogger(__name__)

API_KEY_ENV = "FUDD_API_KEY"
DEFAULT_INPUT_TOKENS = 380
DEFAULT_OUTPUT_TOKENS = 199


@dataclass(frozen=True)
class GenerationParams:
    model_name: str = "gpt-3.5-turbo-0301"
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)


class BackendError(RuntimeError):
    """A backend failure that retrying will not fix."""


class TransientBackendError(BackendError):
    """Transport failures, rate limits and server errors; worth retrying."""


class ChatBackend(Protocol):
    def complete(self, messages: PromptMessages, params: GenerationParams) -> tuple[str, TokenUsage]: ...


class HTTPChatBackend:
    """OpenAI-style ``POST {endpoint}/chat/completions`` client."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 60.0, client: httpx.Client | None = None):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.client = client or httpx.Client(timeout=timeout)

    def complete(self, messages: PromptMessages, params: GenerationParams) -> tuple[str, TokenUsage]:
        body = {
            "model": params.model_name,
            "messages": messages.to_wire(),
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(self.url, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage") or {}
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {resp.text[:200]}") from exc
        return text, TokenUsage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


class FixtureBackend:
    """Deterministic backend answering from canned responses.

    ``pairs`` maps (object 1 name, object 2 name) to a response; a pair asked
    in the opposite orientation gets the stored blocks with captions swapped.
    ``naive`` maps a class name to a bulleted feature list. Anything else gets
    ``default`` or raises :class:`BackendError`.
    """

    def __init__(self, pairs: Mapping[tuple[str, str], str] | None = None, naive: Mapping[str, str] | None = None,
                 default: str | None = None, usage: TokenUsage = TokenUsage(DEFAULT_INPUT_TOKENS, DEFAULT_OUTPUT_TOKENS)):
        self.pairs = dict(pairs or {})
        self.naive = dict(naive or {})
        self.default = default
        self.usage = usage

    @classmethod
    def from_json(cls, obj: dict) -> "FixtureBackend":
        pairs = {(p["object_1"], p["object_2"]): p["response"] for p in obj.get("pairs", [])}
        naive = {n["name"]: n["response"] for n in obj.get("naive", [])}
        return cls(pairs, naive, obj.get("default"))

    def complete(self, messages: PromptMessages, params: GenerationParams) -> tuple[str, TokenUsage]:
        query = messages.final_user_message
        names = names_from_pair_query(query)
        if names is not None:
            if names in self.pairs:
                return self.pairs[names], self.usage
            rev = (names[1], names[0])
            if rev in self.pairs:
                records, _ = parse_differential_response(self.pairs[rev])
                return render_records(r.swapped() for r in records), self.usage
        for name, text in self.naive.items():
            if query == f"What are useful features for distinguishing a {name} in a photo?":
                return text, self.usage
        if self.default is not None:
            return self.default, self.usage
        raise BackendError(f"no fixture response for {query[-120:]!r}")


class CountingBackend:
    """Wraps a backend and counts calls (thread-safe)."""

    def __init__(self, inner: ChatBackend):
        self.inner = inner
        self.calls = 0
        self.prompts: list[PromptMessages] = []
        self._lock = threading.Lock()

    def complete(self, messages, params):
        with self._lock:
            self.calls += 1
            self.prompts.append(messages)
        return self.inner.complete(messages, params)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 60.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")

    def delay(self, retry: int) -> float:
        """Seconds to wait before retry number ``retry`` (1-based)."""
        return min(self.max_delay, self.base_delay * self.factor ** (retry - 1))


@dataclass
class Attempt:
    number: int
    delay_before: float
    error: str | None = None


class RetryError(BackendError):
    def __init__(self, attempts: list[Attempt]):
        self.attempts = attempts
        trail = "; ".join(f"#{a.number}: {a.error}" for a in attempts)
        super().__init__(f"gave up after {len(attempts)} attempts ({trail})")


def chat_with_retry(backend: ChatBackend, messages: PromptMessages, params: GenerationParams,
                    policy: RetryPolicy = RetryPolicy(), *, sleep: Callable[[float], None] = time.sleep,
                    attempts: list[Attempt] | None = None) -> tuple[str, TokenUsage]:
    """Call ``backend`` until it succeeds, retrying only transient failures.

    Every try is appended to ``attempts`` if a list is given.
    """
    log_ = attempts if attempts is not None else []
    for n in range(1, policy.max_attempts + 1):
        delay = policy.delay(n - 1) if n > 1 else 0.0
        if delay:
            sleep(delay)
        attempt = Attempt(n, delay)
        log_.append(attempt)
        try:
            return backend.complete(messages, params)
        except TransientBackendError as exc:
            attempt.error = str(exc)
            log.info("backend attempt %d/%d failed: %s", n, policy.max_attempts, exc)
        except BackendError as exc:
            attempt.error = str(exc)
            raise RetryError(log_) from exc
    raise RetryError(log_)


def pair_key(c1: str, c2: str) -> str:
    for c in (c1, c2):
        if PAIR_SEPARATOR in c:
            raise ValueError(f"class id {c!r} contains the reserved separator {PAIR_SEPARATOR!r}")
    a, b = sorted((c1, c2))
    return f"{a}{PAIR_SEPARATOR}{b}"


class PairCache:
    """Persistent map from an unordered class pair to its differential records.

    ``mode`` is ``"open"`` (misses are generated) or ``"restricted"`` (the key
    set is frozen and misses fall back to single-template descriptions).
    """

    def __init__(self, directory, mode: str | None = None):
        self.store = JsonlStore(directory, "pairs")
        if mode == "restricted":
            self.freeze()
        elif mode not in (None, "open"):
            raise ValueError(f"unknown cache mode {mode!r}")
        elif mode == "open" and self.store.frozen:
            raise ValueError(f"cache at {directory} is frozen (restricted); it cannot be reopened in open mode")
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._memo: dict[str, PairwiseDescriptions] = {}

    @property
    def mode(self) -> str:
        return "restricted" if self.store.frozen else "open"

    def freeze(self) -> None:
        self.store.freeze()

    def lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def __contains__(self, key: str) -> bool:
        return key in self.store

    def __len__(self):
        return len(self.store)

    def keys(self) -> list[str]:
        return self.store.keys()

    def get(self, c1: ClassEntry, c2: ClassEntry) -> PairwiseDescriptions | None:
        """Stored descriptions oriented as (c1, c2), or None."""
        key = pair_key(c1.class_id, c2.class_id)
        stored = self._memo.get(key)
        if stored is None:
            rec = self.store.get(key)
            if rec is None:
                return None
            stored = PairwiseDescriptions(
                rec["object_1"],
                rec["object_2"],
                tuple(DifferentialRecord(*r) for r in rec["records"]),
                rec["name_1"],
                rec["name_2"],
                skipped_blocks=int(rec.get("skipped", 0)),
            )
            self._memo[key] = stored
        return stored if stored.class_1 == c1.class_id else stored.reversed()

    def put(self, pair: PairwiseDescriptions, usage: TokenUsage = TokenUsage()) -> None:
        key = pair_key(pair.class_1, pair.class_2)
        self._memo.pop(key, None)
        self.store.put(
            key,
            {
                "object_1": pair.class_1,
                "object_2": pair.class_2,
                "name_1": pair.name_1,
                "name_2": pair.name_2,
                "records": [[r.attribute, r.caption_1, r.caption_2] for r in pair.records],
                "skipped": pair.skipped_blocks,
                "usage": [usage.input_tokens, usage.output_tokens],
            },
        )

    def close(self) -> None:
        self.store.write_index()


class PairGenerationError(BackendError):
    def __init__(self, key: str, cause: Exception):
        self.key = key
        super().__init__(f"generating pair {key!r} failed: {cause}")


@dataclass
class GenerationStats:
    backend_calls: int = 0
    pairs_generated: int = 0
    empty_parses: int = 0
    usage: TokenUsage = TokenUsage()
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, usage: TokenUsage, calls: int, empty: bool) -> None:
        with self._lock:
            self.backend_calls += calls
            self.pairs_generated += 1
            self.empty_parses += int(empty)
            self.usage = self.usage + usage


def get_or_generate_pair(c1: ClassEntry, c2: ClassEntry, backend: ChatBackend, cache: PairCache, *,
                         params: GenerationParams = GenerationParams(), examples: Sequence[dict] | None = None,
                         policy: RetryPolicy = RetryPolicy(), refresh: bool = False,
                         stats: GenerationStats | None = None,
                         sleep: Callable[[float], None] = time.sleep) -> PairwiseDescriptions:
    """Pairwise descriptions for (c1, c2), generating and caching on a miss in open mode."""
    if c1.class_id == c2.class_id:
        raise ValueError(f"a pair needs two distinct classes, got {c1.class_id!r} twice")
    key = pair_key(c1.class_id, c2.class_id)
    if refresh and cache.mode == "restricted":
        raise ValueError("a restricted cache is frozen and cannot be refreshed")
    with cache.lock_for(key):
        if not refresh:
            hit = cache.get(c1, c2)
            if hit is not None:
                return hit
        if cache.mode == "restricted":
            return PairwiseDescriptions(c1.class_id, c2.class_id, (), c1.display_name, c2.display_name, fallback=True)

        prompt = build_pair_prompt(c1.display_name, c2.display_name, examples)
        attempts: list[Attempt] = []
        try:
            text, usage = chat_with_retry(backend, prompt, params, policy, sleep=sleep, attempts=attempts)
        except BackendError as exc:
            if stats is not None:
                with stats._lock:
                    stats.backend_calls += len(attempts)
            raise PairGenerationError(key, exc) from exc
        records, skipped = parse_differential_response(text)
        if not records:
            log.warning("pair %s: response parsed to zero records (%d incomplete blocks)", key, skipped)
        pair = PairwiseDescriptions(c1.class_id, c2.class_id, tuple(records), c1.display_name, c2.display_name,
                                    skipped_blocks=skipped)
        cache.put(pair, usage)
        if stats is not None:
            stats.record(usage, len(attempts), not records)
        return pair


class NaiveCache:
    """Cache of naive (per-class) LLM descriptions, keyed by class id."""

    def __init__(self, directory):
        self.store = JsonlStore(directory, "naive")

    def get_or_generate(self, entry: ClassEntry, backend: ChatBackend, *, params=GenerationParams(),
                        examples=None, policy=RetryPolicy(), stats: GenerationStats | None = None,
                        sleep=time.sleep):
        rec = self.store.get(entry.class_id)
        if rec is None:
            prompt = naive_llm_prompt(entry.display_name, examples)
            attempts: list[Attempt] = []
            text, usage = chat_with_retry(backend, prompt, params, policy, sleep=sleep, attempts=attempts)
            rec = {"name": entry.display_name, "response": text}
            self.store.put(entry.class_id, rec)
            if stats is not None:
                stats.record(usage, len(attempts), False)
        return parse_naive_response(entry.display_name, rec["response"])

    def close(self):
        self.store.write_index()


class Gateway:
    """Binds a backend, a pair cache and generation settings to one class catalog.

    ``pair(c1, c2)`` has the signature expected by
    :func:`fudd.diffgen.assemble_differential_set`. ``parallelism`` bounds the
    number of concurrent backend calls.
    """

    def __init__(self, classes: Iterable[ClassEntry], backend: ChatBackend | None, cache: PairCache, *,
                 params: GenerationParams = GenerationParams(), examples: Sequence[dict] | None = None,
                 policy: RetryPolicy = RetryPolicy(), parallelism: int = 4, naive_cache: NaiveCache | None = None,
                 naive_examples: Sequence[dict] | None = None, sleep=time.sleep):
        self.entries = {c.class_id: c for c in classes}
        self.backend = backend
        self.cache = cache
        self.params = params
        self.examples = examples
        self.naive_examples = naive_examples
        self.policy = policy
        self.naive_cache = naive_cache
        self.stats = GenerationStats()
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, parallelism))

    def _backend(self) -> ChatBackend:
        if self.backend is None:
            raise BackendError("no chat backend configured")
        return _Bounded(self.backend, self._slots)

    def pair(self, c1: str, c2: str) -> PairwiseDescriptions:
        backend = self.backend if self.cache.mode == "restricted" else self._backend()
        return get_or_generate_pair(self.entries[c1], self.entries[c2], backend, self.cache, params=self.params,
                                    examples=self.examples, policy=self.policy, stats=self.stats, sleep=self.sleep)

    def naive(self, class_id: str):
        if self.naive_cache is None:
            raise BackendError("no naive-description cache configured")
        return self.naive_cache.get_or_generate(self.entries[class_id], self._backend(), params=self.params,
                                                examples=self.naive_examples, policy=self.policy,
                                                stats=self.stats, sleep=self.sleep)

    def close(self):
        self.cache.close()
        if self.naive_cache is not None:
            self.naive_cache.close()


class _Bounded:
    def __init__(self, inner, slots):
        self.inner, self.slots = inner, slots

    def complete(self, messages, params):
        with self.slots:
            return self.inner.complete(messages, params)


@dataclass
class PrecomputeSummary:
    images_processed: int = 0
    unique_pairs: int = 0
    pairs_generated: int = 0
    backend_calls: int = 0
    already_cached: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    dry_run: bool = False


def needed_pairs(manifest: DatasetManifest, table: ClassEmbeddingTable, k: int, images=None) -> tuple[list[tuple[str, str]], int]:
    """Unique canonical pairs inside every labelled image's ambiguous set, and the image count."""
    images = images if images is not None else manifest.load_images()
    wanted: set[tuple[str, str]] = set()
    image_ids = sorted(manifest.labels)
    for image_id in image_ids:
        members = ambiguous_set(images[image_id], table, k, image_id).members
        wanted.update(combinations(sorted(members), 2))
    return sorted(wanted), len(image_ids)


def precompute_restricted_cache(manifest: DatasetManifest, table: ClassEmbeddingTable, k: int,
                                backend: ChatBackend, cache: PairCache, *, params=GenerationParams(),
                                examples=None, policy=RetryPolicy(), parallelism: int = 1, images=None,
                                dry_run: bool = False, freeze: bool = True, sleep=time.sleep) -> PrecomputeSummary:
    """Generate every pair seen in some image's top-``k`` ambiguous set, then freeze the cache.

    Each unique pair is generated at most once. Failures are recorded and do
    not stop the run; a run with failures is left unfrozen so it can resume.
    """
    pairs, n_images = needed_pairs(manifest, table, k, images)
    missing = [p for p in pairs if pair_key(*p) not in cache]
    summary = PrecomputeSummary(n_images, len(pairs), already_cached=len(pairs) - len(missing), dry_run=dry_run)
    if dry_run:
        summary.pairs_generated = len(missing)
        return summary
    if cache.mode == "restricted" and missing:
        raise ValueError(f"cache is frozen but {len(missing)} required pairs are missing")

    entries = {c.class_id: c for c in manifest.classes}
    stats = GenerationStats()

    def work(p):
        try:
            get_or_generate_pair(entries[p[0]], entries[p[1]], backend, cache, params=params, examples=examples,
                                 policy=policy, stats=stats, sleep=sleep)
        except BackendError as exc:
            return pair_key(*p), str(exc)
        return None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        for failure in pool.map(work, missing):
            if failure:
                summary.failures[failure[0]] = failure[1]
    summary.pairs_generated = stats.pairs_generated
    summary.backend_calls = stats.backend_calls
    if freeze and not summary.failures:
        cache.freeze()
    else:
        cache.close()
    return summary


def estimate_cost(n_queries: float, avg_input_tokens: float = DEFAULT_INPUT_TOKENS,
                  avg_output_tokens: float = DEFAULT_OUTPUT_TOKENS, price_per_1k_input: float = 0.001,
                  price_per_1k_output: float = 0.002) -> float:
    """Dollar cost of ``n_queries`` prompts at the given per-1k-token prices."""
    args = (n_queries, avg_input_tokens, avg_output_tokens, price_per_1k_input, price_per_1k_output)
    if any(a < 0 or not math.isfinite(a) for a in args):
        raise ValueError("cost inputs must be finite and non-negative")
    return n_queries * (avg_input_tokens * price_per_1k_input + avg_output_tokens * price_per_1k_output) / 1000.0


def full_pair_count(n_classes: int) -> int:
    return math.comb(n_classes, 2)

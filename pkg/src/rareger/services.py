"""Clients for the remote chat LLM, TTS and ASR services.

Each client wraps a backend (HTTP, mock or simulated) with the same
machinery: content-addressed caching, bounded retries with exponential
backoff, a per-client concurrency bound and an optional audit log.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import httpx
import numpy as np

from rareger import kernels
from rareger.corpus import Hypothesis
from rareger.errors import ClientError, ServiceError, ServiceUnavailable, TransientServiceError
from rareger.store import BlobStore, JsonlCache, canonical_json, content_key
from rareger.text import Language

log = logging.getLogger(__name__)

_ROLES = ("system", "user", "assistant")


# -- domain types ---------------------------------------------------------------

@dataclass(frozen=True)
class ChatExchange:
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    model_id: str = ""

    def __post_init__(self):
        msgs = tuple(
            (m["role"], m["content"]) if isinstance(m, Mapping) else (m[0], m[1]) for m in self.messages
        )
        object.__setattr__(self, "messages", msgs)
        for role, _ in msgs:
            if role not in _ROLES:
                raise ValueError(f"unknown chat role {role!r}")
        if not any(role == "user" for role, _ in msgs):
            raise ValueError("a chat exchange needs at least one user message")

    @classmethod
    def user(cls, content: str, temperature: float = 0.0, model_id: str = "") -> "ChatExchange":
        return cls((("user", content),), temperature, model_id)

    @classmethod
    def from_messages(cls, messages, temperature: float = 0.0, model_id: str = "") -> "ChatExchange":
        return cls(tuple(messages), temperature, model_id)

    def as_dicts(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.messages]

    @property
    def last_user(self) -> str:
        return next(c for r, c in reversed(self.messages) if r == "user")

    @property
    def system(self) -> Optional[str]:
        return next((c for r, c in self.messages if r == "system"), None)

    def cache_key(self) -> str:
        return content_key("chat", self.model_id, self.temperature, self.as_dicts())


@dataclass(frozen=True)
class TtsJob:
    text: str
    speaker_id: int
    voice_id: str = ""
    language: Language = Language.EN

    def __post_init__(self):
        object.__setattr__(self, "language", Language.parse(self.language))
        if not self.text.strip():
            raise ValueError("TTS job text is empty")
        if self.speaker_id < 1:
            raise ValueError("speaker_id starts at 1")

    def to_dict(self) -> dict:
        return {"text": self.text, "speaker_id": self.speaker_id, "voice_id": self.voice_id,
                "language": self.language.value}


@dataclass(frozen=True)
class AsrResult:
    utterance_id: str
    nbest: tuple[Hypothesis, ...]

    def __post_init__(self):
        if not self.nbest:
            raise ValueError("ASR result needs at least one hypothesis")

    @property
    def texts(self) -> list[str]:
        return [h.text for h in self.nbest]


# -- retry / concurrency / audit ------------------------------------------------

class AuditLog:
    """Append-only JSON-lines record of every payload sent to a real backend."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, service: str, request, response) -> None:
        line = json.dumps(
            {"ts": datetime.now(timezone.utc).isoformat(), "service": service,
             "request": request, "response": response},
            ensure_ascii=False, default=str,
        )
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


@dataclass
class RetryPolicy:
    max_retries: int = 2
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    sleep: Callable[[float], None] = time.sleep

    def run(self, fn, what: str = "request"):
        attempt = 0
        while True:
            try:
                return fn()
            except TransientServiceError as exc:
                if attempt >= self.max_retries:
                    raise ServiceUnavailable(f"{what} failed after {attempt + 1} attempt(s): {exc}") from exc
                delay = min(self.backoff_max, self.backoff_base * (2 ** attempt))
                log.warning("%s failed (%s); retrying in %.2fs", what, exc, delay)
                attempt += 1
                if delay > 0:
                    self.sleep(delay)


class _ServiceClient:
    service = "service"

    def __init__(self, backend, cache: JsonlCache | None = None, retry: RetryPolicy | None = None,
                 max_concurrency: int = 4, audit: AuditLog | None = None):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.backend = backend
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.max_concurrency = max_concurrency
        self.audit = audit
        self._sem = threading.BoundedSemaphore(max_concurrency)
        self._count_lock = threading.Lock()
        self.n_calls = 0

    def _call(self, fn, request_for_audit):
        def attempt():
            with self._sem:
                with self._count_lock:
                    self.n_calls += 1
                return fn()

        result = self.retry.run(attempt, self.service)
        if self.audit is not None:
            self.audit.record(self.service, request_for_audit, result if isinstance(result, (str, list, dict)) else None)
        return result


# -- chat -----------------------------------------------------------------------

class ChatClient(_ServiceClient):
    """Chat completions with caching of temperature-0 exchanges."""

    service = "chat"

    def __init__(self, backend, model_id: str = "", **kwargs):
        super().__init__(backend, **kwargs)
        self.model_id = model_id

    def chat(self, exchange: ChatExchange) -> str:
        if not exchange.model_id and self.model_id:
            exchange = ChatExchange(exchange.messages, exchange.temperature, self.model_id)
        cacheable = self.cache is not None and exchange.temperature == 0
        if cacheable:
            key = exchange.cache_key()
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        text = self._call(lambda: self.backend.complete(exchange),
                          {"model": exchange.model_id, "temperature": exchange.temperature,
                           "messages": exchange.as_dicts()})
        if cacheable:
            self.cache.put(key, text)
        return text


class OpenAICompatibleBackend:
    """``POST {base_url}/chat/completions`` in the OpenAI wire format."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0,
                 transport: httpx.BaseTransport | None = None, max_tokens: int | None = None):
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.max_tokens = max_tokens
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout,
                                  transport=transport)

    def complete(self, exchange: ChatExchange) -> str:
        body = {"model": exchange.model_id, "messages": exchange.as_dicts(),
                "temperature": exchange.temperature}
        if self.max_tokens:
            body["max_tokens"] = self.max_tokens
        resp = _post(self._http, "/chat/completions", json=body)
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ServiceError(f"malformed chat completion response: {resp.text[:200]}") from exc


def _post(http: httpx.Client, url: str, **kwargs) -> httpx.Response:
    try:
        resp = http.post(url, **kwargs)
    except (httpx.TimeoutException, httpx.NetworkError) as exc:
        raise TransientServiceError(str(exc)) from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransientServiceError(f"HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
    return resp


class MockChatBackend:
    """Canned responses keyed by the last user message (or a callable).

    ``failures`` is a list of exceptions raised, in order, before any answer is
    produced.  Call counts and peak concurrency are recorded for tests.
    """

    def __init__(self, responses=None, default: str | None = None, failures: Sequence[Exception] = (),
                 delay: float = 0.0):
        self.responses = responses if responses is not None else {}
        self.default = default
        self.failures = list(failures)
        self.delay = delay
        self.calls: list[ChatExchange] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, exchange: ChatExchange) -> str:
        with self._lock:
            self.calls.append(exchange)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            failure = self.failures.pop(0) if self.failures else None
        try:
            if self.delay:
                time.sleep(self.delay)
            if failure is not None:
                raise failure
            if callable(self.responses):
                return self.responses(exchange)
            if exchange.last_user in self.responses:
                return self.responses[exchange.last_user]
            if self.default is not None:
                return self.default
            raise ClientError(f"mock has no response for {exchange.last_user[:60]!r}", status=404)
        finally:
            with self._lock:
                self.in_flight -= 1


# -- TTS ------------------------------------------------------------------------

class TtsClient(_ServiceClient):
    """Synthesises into a content-addressed blob store and returns the digest."""

    service = "tts"

    def __init__(self, backend, store: BlobStore, n_speakers: int, voices: Sequence[str] = (), **kwargs):
        super().__init__(backend, **kwargs)
        self.store = store
        self.n_speakers = n_speakers
        self.voices = list(voices)

    def voice_for(self, speaker_id: int) -> str:
        if self.voices:
            return self.voices[(speaker_id - 1) % len(self.voices)]
        return f"speaker-{speaker_id}"

    def job(self, text: str, speaker_id: int, language=Language.EN) -> TtsJob:
        return TtsJob(text, speaker_id, self.voice_for(speaker_id), language)

    def synthesize(self, job: TtsJob) -> str:
        if not 1 <= job.speaker_id <= self.n_speakers:
            raise ValueError(f"speaker_id {job.speaker_id} outside 1..{self.n_speakers}")
        key = content_key("tts", job.to_dict())
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None and self.store.exists(hit):
                return hit
        audio = self._call(lambda: self.backend.synthesize(job), job.to_dict())
        locator = self.store.put(audio)
        if self.cache is not None:
            self.cache.put(key, locator)
        return locator


class HttpTtsBackend:
    """``POST {base_url}/synthesize`` with a JSON job; the body of the reply is audio."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 120.0,
                 transport: httpx.BaseTransport | None = None):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout,
                                  transport=transport)

    def synthesize(self, job: TtsJob) -> bytes:
        return _post(self._http, "/synthesize", json=job.to_dict()).content


# -- ASR ------------------------------------------------------------------------

class AsrClient(_ServiceClient):
    service = "asr"

    def __init__(self, backend, store: BlobStore | None = None, language=Language.EN, **kwargs):
        super().__init__(backend, **kwargs)
        self.store = store
        self.language = Language.parse(language)

    def transcribe(self, source: str, n: int, utterance_id: str | None = None) -> AsrResult:
        """N-best for a blob locator, or (simulated backends only) a reference text."""
        if n < 1:
            raise ValueError("n must be >= 1")
        is_blob = self.store is not None and len(source) == 64 and self.store.exists(source)
        key = content_key("asr", "blob" if is_blob else "text", source, n, self.language.value)
        uid = utterance_id or source[:16]
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return AsrResult(uid, tuple(Hypothesis(h["text"], h.get("score")) for h in hit))
        if is_blob:
            audio = self.store.get(source)
            hyps = self._call(lambda: self.backend.transcribe(audio, n, self.language),
                              {"locator": source, "n": n})
        else:
            if not hasattr(self.backend, "transcribe_text"):
                raise ValueError(f"{source[:40]!r} is not a stored blob and the backend needs audio")
            hyps = self._call(lambda: self.backend.transcribe_text(source, n, self.language),
                              {"text": source, "n": n})
        hyps = list(hyps)[:n]
        if self.cache is not None:
            self.cache.put(key, [{"text": h.text, "score": h.score} for h in hyps])
        return AsrResult(uid, tuple(hyps))


class HttpAsrBackend:
    """``POST {base_url}/transcribe?n=..&language=..`` with raw audio bytes;
    expects ``{"nbest": [{"text": ..., "score": ...}, ...]}`` best-first."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 120.0,
                 transport: httpx.BaseTransport | None = None):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout,
                                  transport=transport)

    def transcribe(self, audio: bytes, n: int, language) -> list[Hypothesis]:
        resp = _post(self._http, "/transcribe", content=audio,
                     params={"n": n, "language": Language.parse(language).value},
                     headers={"Content-Type": "application/octet-stream"})
        try:
            return [Hypothesis(h["text"], h.get("score")) for h in resp.json()["nbest"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ServiceError(f"malformed ASR response: {resp.text[:200]}") from exc


# -- simulated ASR channel ----------------------------------------------------------

@dataclass(frozen=True)
class ConfusionModel:
    sub_table: Mapping[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)
    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0
    seed: int = 0

    def __post_init__(self):
        table = {}
        for tok, cands in self.sub_table.items():
            cands = tuple((c, float(w)) for c, w in cands)
            if any(w <= 0 for _, w in cands):
                raise ValueError(f"confusion weights for {tok!r} must be positive")
            if cands:
                table[tok] = cands
        object.__setattr__(self, "sub_table", table)
        for p in (self.p_sub, self.p_del, self.p_ins):
            if not 0.0 <= p <= 1.0:
                raise ValueError("channel probabilities must lie in [0, 1]")
        if self.p_sub + self.p_del + self.p_ins > 1.0 + 1e-12:
            raise ValueError("p_sub + p_del + p_ins must not exceed 1")

    def with_params(self, **kwargs) -> "ConfusionModel":
        base = {"sub_table": self.sub_table, "p_sub": self.p_sub, "p_del": self.p_del,
                "p_ins": self.p_ins, "seed": self.seed}
        base.update(kwargs)
        return ConfusionModel(**base)

    def merged(self, extra: Mapping[str, Sequence]) -> "ConfusionModel":
        """Add confusables; ``extra`` maps a token to strings or (string, weight) pairs."""
        table = {k: list(v) for k, v in self.sub_table.items()}
        for tok, cands in extra.items():
            row = table.setdefault(tok.casefold(), [])
            for c in cands:
                c, w = (c, 1.0) if isinstance(c, str) else (c[0], c[1])
                if all(c != have for have, _ in row):
                    row.append((c, float(w)))
        return self.with_params(sub_table={k: tuple(v) for k, v in table.items()})

    def to_dict(self) -> dict:
        return {"sub_table": {k: [list(c) for c in v] for k, v in sorted(self.sub_table.items())},
                "p_sub": self.p_sub, "p_del": self.p_del, "p_ins": self.p_ins, "seed": self.seed}


def _phones(value: str) -> list[str]:
    return value.split() if " " in value.strip() else list(value.strip())


def build_confusion_model(lexicon, phonetic_distance_threshold: int, p_sub: float = 0.3,
                          p_del: float = 0.0, p_ins: float = 0.0, seed: int = 0) -> ConfusionModel:
    """Words whose pronunciations are within the threshold become mutual
    confusables, weighted 1 / (1 + distance)."""
    entries = lexicon.entries if hasattr(lexicon, "entries") else dict(lexicon)
    if not entries:
        raise ValueError("lexicon is empty")
    words = sorted(entries)
    phones = {w: _phones(entries[w]) for w in words}
    vocab: dict[str, int] = {}
    coded = {w: np.array([vocab.setdefault(p, len(vocab)) for p in phones[w]], dtype=np.int64) for w in words}
    table: dict[str, list[tuple[str, float]]] = {}
    for i, a in enumerate(words):
        for b in words[i + 1:]:
            if abs(len(coded[a]) - len(coded[b])) > phonetic_distance_threshold:
                continue
            d = kernels.edit_distance(coded[a], coded[b])
            if d <= phonetic_distance_threshold:
                w = 1.0 / (1.0 + d)
                table.setdefault(a, []).append((b, w))
                table.setdefault(b, []).append((a, w))
    return ConfusionModel({k: tuple(v) for k, v in table.items()}, p_sub, p_del, p_ins, seed)


def load_confusion_model(path) -> ConfusionModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ConfusionModel(
        {k: tuple((c, w) for c, w in v) for k, v in data.get("sub_table", {}).items()},
        data.get("p_sub", 0.0), data.get("p_del", 0.0), data.get("p_ins", 0.0), data.get("seed", 0),
    )


def save_confusion_model(model: ConfusionModel, path) -> None:
    Path(path).write_text(canonical_json(model.to_dict()) + "\n", encoding="utf-8")


@dataclass
class Clients:
    """The service handles one pipeline run needs."""

    chat: ChatClient
    tts: Optional[TtsClient] = None
    asr: Optional[AsrClient] = None
    phonetics: Optional[object] = None
    catalog: Optional[object] = None

    def total_calls(self) -> int:
        return sum(c.n_calls for c in (self.chat, self.tts, self.asr) if c is not None)

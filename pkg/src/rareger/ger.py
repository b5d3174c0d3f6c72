"""GER inference over an evaluation set, plus a table-lookup corrector.

``LookupCorrector`` learns span rewrite rules from error pairs.  It is the
offline stand-in for a fine-tuned LLM: plugged into the simulated chat
backend it reads the same GER prompt a real model would receive.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from rareger.corpus import EvalSet, HypothesisSet, dumps_record, read_jsonl
from rareger.errors import EmptyCorrection, MissingHypotheses, ServiceError, GerServiceError
from rareger.metrics import OpKind, align
from rareger.phonetics import PhoneticScheme
from rareger.prompts import GerRequest, build_ger_messages, parse_ger_response, parse_ger_user_message
from rareger.services import ChatExchange, Clients
from rareger.store import atomic_write
from rareger.text import Language, NormPolicy, render, tokenize

log = logging.getLogger(__name__)


class GerMode(str, enum.Enum):
    PROMPT_ONLY = "PROMPT_ONLY"
    NBEST = "NBEST"
    NBEST_PHONETIC = "NBEST_PHONETIC"

    @classmethod
    def parse(cls, value) -> "GerMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper().replace("-", "_"))


@dataclass(frozen=True)
class GerCondition:
    mode: GerMode = GerMode.NBEST
    scheme: Optional[PhoneticScheme] = None
    model_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mode", GerMode.parse(self.mode))
        if self.scheme is not None:
            object.__setattr__(self, "scheme", PhoneticScheme.parse(self.scheme))
        if (self.scheme is not None) != (self.mode is GerMode.NBEST_PHONETIC):
            raise ValueError("a phonetic scheme is required exactly when mode is NBEST_PHONETIC")

    @property
    def label(self) -> str:
        base = {"PROMPT_ONLY": "prompt-only", "NBEST": "nbest", "NBEST_PHONETIC": "nbest"}[self.mode.value]
        if self.scheme is not None:
            base += "+" + self.scheme.value.lower().replace("_", "-")
        return base

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "scheme": None if self.scheme is None else self.scheme.value,
                "model_id": self.model_id}

    @classmethod
    def from_dict(cls, rec: dict) -> "GerCondition":
        return cls(rec["mode"], rec.get("scheme"), rec.get("model_id", ""))


@dataclass(frozen=True)
class GerOutput:
    utterance_id: str
    corrected: str
    condition: GerCondition
    raw_response: str
    latency_ms: float
    fallback: bool = False

    def to_dict(self) -> dict:
        return {"utterance_id": self.utterance_id, "corrected": self.corrected,
                "condition": self.condition.to_dict(), "raw_response": self.raw_response,
                "latency_ms": self.latency_ms, "fallback": self.fallback}

    @classmethod
    def from_dict(cls, rec: dict) -> "GerOutput":
        return cls(rec["utterance_id"], rec["corrected"], GerCondition.from_dict(rec["condition"]),
                   rec["raw_response"], float(rec["latency_ms"]), bool(rec.get("fallback", False)))


def build_request(nbest: HypothesisSet, condition: GerCondition, clients: Clients,
                  language=Language.EN) -> GerRequest:
    lang = Language.parse(language)
    texts = [nbest.best] if condition.mode is GerMode.PROMPT_ONLY else nbest.texts
    phonetic = None
    if condition.mode is GerMode.NBEST_PHONETIC:
        phonetic = clients.phonetics.render(condition.scheme, nbest.best)
    return GerRequest(tuple(texts), phonetic, lang)


def correct_one(nbest: HypothesisSet, condition: GerCondition, clients: Clients,
                language=Language.EN) -> GerOutput:
    start = time.perf_counter()
    try:
        request = build_request(nbest, condition, clients, language)
        exchange = ChatExchange.from_messages(build_ger_messages(request, clients.catalog),
                                              temperature=0.0, model_id=condition.model_id)
        raw = clients.chat.chat(exchange)
    except ServiceError as exc:
        raise GerServiceError(nbest.utterance_id, exc) from exc
    try:
        corrected, fallback = parse_ger_response(raw), False
    except EmptyCorrection:
        log.warning("%s: empty correction, falling back to the 1-best", nbest.utterance_id)
        corrected, fallback = nbest.best, True
    latency = (time.perf_counter() - start) * 1000.0
    return GerOutput(nbest.utterance_id, corrected, condition, raw, round(latency, 3), fallback)


def load_outputs(path) -> list[GerOutput]:
    return [GerOutput.from_dict(rec) for rec in read_jsonl(path)]


def save_outputs(outputs: Iterable[GerOutput], path) -> None:
    atomic_write(path, "".join(dumps_record(o.to_dict()) + "\n" for o in outputs))


def run_eval(eval_set: EvalSet, hypotheses: Mapping[str, HypothesisSet], condition: GerCondition,
             clients: Clients, checkpoint=None, workers: int = 4) -> list[GerOutput]:
    """Correct every utterance, resuming from ``checkpoint`` when it exists.

    Completed utterances are appended to the checkpoint as they finish; once
    all are done the file is rewritten in evaluation-set order.
    """
    for utt in eval_set:
        if utt.id not in hypotheses:
            raise MissingHypotheses(utt.id)
    path = Path(checkpoint) if checkpoint is not None else None
    done: dict[str, GerOutput] = {}
    if path is not None and path.exists():
        for out in load_outputs(path):
            if out.condition == condition:
                done[out.utterance_id] = out
    todo = [u for u in eval_set if u.id not in done]
    lock = threading.Lock()

    def work(utt):
        out = correct_one(hypotheses[utt.id], condition, clients, utt.language)
        with lock:
            done[utt.id] = out
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write(dumps_record(out.to_dict()) + "\n")
        return out

    if todo:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            list(pool.map(work, todo))
    outputs = [done[u.id] for u in eval_set]
    if path is not None and outputs:
        save_outputs(outputs, path)
    return outputs


# -- lookup corrector -----------------------------------------------------------------

class LookupCorrector:
    """Rewrites hypothesis spans using rules harvested from error pairs.

    Each maximal run of non-matching alignment operations between a
    hypothesis and its reference yields a rule ``hyp span -> ref span``;
    the most frequent target per source span wins (ties: lexicographic).
    Output is in normalised form.
    """

    def __init__(self, language=Language.EN, use_all_hypotheses: bool = True):
        self.language = Language.parse(language)
        self.policy = NormPolicy.for_language(self.language)
        self.use_all_hypotheses = use_all_hypotheses
        self._counts: dict[tuple, Counter] = defaultdict(Counter)
        self._rules: dict[tuple, tuple] = {}
        self._max_len = 0

    def fit(self, pairs: Iterable[tuple[str, list[str]]]) -> "LookupCorrector":
        for reference, hyps in pairs:
            ref = tokenize(reference, self.policy)
            for hyp_text in (hyps if self.use_all_hypotheses else hyps[:1]):
                self._harvest(ref, tokenize(hyp_text, self.policy))
        self._rules = {k: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for k, c in self._counts.items()}
        self._max_len = max((len(k) for k in self._rules), default=0)
        return self

    def _harvest(self, ref, hyp) -> None:
        src, dst = [], []
        for op in align(ref, hyp).ops + (None,):
            if op is None or op.kind is OpKind.MATCH:
                if src:
                    self._counts[tuple(src)][tuple(dst)] += 1
                src, dst = [], []
                continue
            if op.hyp_token is not None:
                src.append(op.hyp_token)
            if op.ref_token is not None:
                dst.append(op.ref_token)

    @classmethod
    def from_examples(cls, examples, language=Language.EN, **kwargs) -> "LookupCorrector":
        return cls(language, **kwargs).fit((e.reference, e.nbest.texts) for e in examples)

    @classmethod
    def from_finetune_jsonl(cls, path, language=Language.EN, **kwargs) -> "LookupCorrector":
        lang = Language.parse(language)
        pairs = []
        for rec in read_jsonl(path):
            msgs = {m["role"]: m["content"] for m in rec["messages"]}
            hyps, _ = parse_ger_user_message(msgs["user"], lang)
            pairs.append((msgs["assistant"], hyps))
        return cls(lang, **kwargs).fit(pairs)

    @property
    def rules(self) -> dict:
        return dict(self._rules)

    def correct(self, text: str) -> str:
        toks = tokenize(text, self.policy)
        out, i = [], 0
        while i < len(toks):
            for k in range(min(self._max_len, len(toks) - i), 0, -1):
                target = self._rules.get(tuple(toks[i:i + k]))
                if target is not None:
                    out.extend(target)
                    i += k
                    break
            else:
                out.append(toks[i])
                i += 1
        return render(out, self.policy)

    def __call__(self, hypotheses, pronunciation=None) -> str:
        return self.correct(hypotheses[0])

"""Rare-word lists, evaluation sets, N-best hypotheses and error-pair records."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from rareger.errors import CoverageInfeasible, DecodeError, EmptyList, ParseError
from rareger.phonetics import PhoneticText
from rareger.text import Language, NormPolicy, normalize_entry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RareEntry:
    surface: str
    domain_hint: Optional[str] = None


@dataclass(frozen=True)
class RareWordList:
    language: Language
    entries: tuple[RareEntry, ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "language", Language.parse(self.language))
        seen = set()
        for e in self.entries:
            if not e.surface or e.surface != e.surface.strip():
                raise ValueError(f"rare-word surface must be non-empty and trimmed: {e.surface!r}")
            key = normalize_entry(e.surface, self.language)
            if key in seen:
                raise ValueError(f"duplicate rare word after normalisation: {e.surface!r}")
            seen.add(key)

    @classmethod
    def from_surfaces(cls, surfaces: Iterable, language, source: str = "") -> "RareWordList":
        """Normalise, drop blanks and duplicates (first one wins), keep order."""
        lang = Language.parse(language)
        entries, seen = [], set()
        for item in surfaces:
            if isinstance(item, RareEntry):
                surface, hint = item.surface, item.domain_hint
            else:
                surface, hint = item, None
            norm = normalize_entry(surface, lang)
            if not norm:
                continue
            if norm in seen:
                log.warning("duplicate rare word %r ignored", surface)
                continue
            seen.add(norm)
            entries.append(RareEntry(norm, hint))
        return cls(lang, tuple(entries), source)

    @property
    def surfaces(self) -> list[str]:
        return [e.surface for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_rare_words(path, language) -> RareWordList:
    """Read ``<surface>[\\t<domain_hint>]`` lines into a normalised list."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"{path}: not valid UTF-8 ({exc})") from exc
    items = []
    for line in text.splitlines():
        if not line.strip():
            continue
        surface, _, hint = line.partition("\t")
        items.append(RareEntry(surface, hint.strip() or None))
    lst = RareWordList.from_surfaces(items, language, source=str(path))
    if not lst.entries:
        raise EmptyList(f"{path}: no rare words")
    return lst


def save_rare_words(words: RareWordList, path) -> None:
    lines = []
    for e in words.entries:
        lines.append(e.surface if e.domain_hint is None else f"{e.surface}\t{e.domain_hint}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- evaluation sets ----------------------------------------------------------

@dataclass(frozen=True)
class EvalUtterance:
    id: str
    reference: str
    language: Language = Language.EN
    audio_ref: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "language", Language.parse(self.language))
        if not self.reference.strip():
            raise ValueError(f"utterance {self.id!r} has an empty reference")


@dataclass(frozen=True)
class EvalSet:
    utterances: tuple[EvalUtterance, ...]
    name: str = ""

    def __post_init__(self):
        ids = [u.id for u in self.utterances]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate utterance ids: {', '.join(dup)}")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]

    @property
    def language(self) -> Language:
        return self.utterances[0].language if self.utterances else Language.EN


def load_eval_set(path, name: str | None = None) -> EvalSet:
    utts = []
    for rec in read_jsonl(path):
        utts.append(
            EvalUtterance(
                id=str(rec["id"]),
                reference=rec["reference"],
                language=rec.get("language", "EN"),
                audio_ref=rec.get("audio_ref"),
            )
        )
    return EvalSet(tuple(utts), name if name is not None else Path(path).stem)


def save_eval_set(eval_set: EvalSet, path) -> None:
    write_jsonl(
        path,
        (
            {"id": u.id, "reference": u.reference, "language": u.language.value, "audio_ref": u.audio_ref}
            for u in eval_set
        ),
    )


# -- hypotheses ---------------------------------------------------------------

@dataclass(frozen=True)
class Hypothesis:
    text: str
    score: Optional[float] = None


@dataclass(frozen=True)
class HypothesisSet:
    utterance_id: str
    hypotheses: tuple[Hypothesis, ...]

    def __post_init__(self):
        if not self.hypotheses:
            raise ValueError(f"empty hypothesis set for {self.utterance_id!r}")

    @classmethod
    def from_texts(cls, utterance_id: str, texts: Iterable[str]) -> "HypothesisSet":
        return cls(utterance_id, tuple(Hypothesis(t) for t in texts))

    @property
    def best(self) -> str:
        return self.hypotheses[0].text

    @property
    def texts(self) -> list[str]:
        return [h.text for h in self.hypotheses]

    def truncated(self, n: int) -> "HypothesisSet":
        return HypothesisSet(self.utterance_id, self.hypotheses[:n])

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "hypotheses": [{"text": h.text, "score": h.score} for h in self.hypotheses],
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "HypothesisSet":
        return cls(
            str(rec["utterance_id"]),
            tuple(Hypothesis(h["text"], h.get("score")) for h in rec["hypotheses"]),
        )


def load_hypotheses(path, max_n: int | None = None) -> dict[str, HypothesisSet]:
    out = {}
    for rec in read_jsonl(path):
        hs = HypothesisSet.from_dict(rec)
        if max_n is not None and len(hs.hypotheses) > max_n:
            raise ValueError(f"{hs.utterance_id}: {len(hs.hypotheses)} hypotheses exceed N={max_n}")
        out[hs.utterance_id] = hs
    return out


def save_hypotheses(hyps: Iterable[HypothesisSet], path) -> None:
    write_jsonl(path, (h.to_dict() for h in hyps))


# -- training examples --------------------------------------------------------

@dataclass(frozen=True)
class ErrorPairExample:
    reference: str
    nbest: HypothesisSet
    rare_word: str
    transcript_idx: int
    speaker_id: int
    phonetic: Optional[PhoneticText] = None

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "nbest": self.nbest.to_dict(),
            "rare_word": self.rare_word,
            "transcript_idx": self.transcript_idx,
            "speaker_id": self.speaker_id,
            "phonetic": None if self.phonetic is None else self.phonetic.to_dict(),
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ErrorPairExample":
        ph = rec.get("phonetic")
        return cls(
            reference=rec["reference"],
            nbest=HypothesisSet.from_dict(rec["nbest"]),
            rare_word=rec["rare_word"],
            transcript_idx=int(rec["transcript_idx"]),
            speaker_id=int(rec["speaker_id"]),
            phonetic=None if ph is None else PhoneticText.from_dict(ph),
        )


# -- JSON-lines helpers -------------------------------------------------------

def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})", raw=line) from exc
    return out


def dumps_record(rec) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


# -- LLM-assisted list construction -------------------------------------------

_BULLET = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•・])\s*")
_MAX_ENTRY_TOKENS = 4


def parse_word_lines(response: str, language) -> list[str]:
    """One candidate per line; bullets, numbering and quotes removed.

    Raises ParseError when the response has content but no line looks like a
    word or short phrase.
    """
    lang = Language.parse(language)
    words, rejected = [], []
    for line in response.splitlines():
        item = _BULLET.sub("", line).strip().strip("\"'`“”「」*").strip()
        if not item or item.endswith(":") or item.startswith("```"):
            continue
        if lang is Language.EN:
            ok = len(item.split()) <= _MAX_ENTRY_TOKENS and not item.endswith(".")
        else:
            ok = len(item) <= 20 and not item.endswith("。")
        (words if ok else rejected).append(item)
    if not words and rejected:
        raise ParseError("could not find a word list in the LLM response", raw=response)
    return words


def extract_rare_words(corpus_text: str, language, llm_client, target_coverage_pct: float = 10.0,
                       catalog=None, model_id: str | None = None) -> RareWordList:
    """Ask the LLM for hard-to-recognise terms, then trim to a coverage budget.

    Trimming drops the entry covering the most corpus units first until the
    list's coverage of ``corpus_text`` (one reference per line) is below
    ``target_coverage_pct``.
    """
    from rareger.metrics import coverage_counts
    from rareger.prompts import PromptCatalog
    from rareger.services import ChatExchange

    if not corpus_text.strip():
        raise ValueError("corpus_text is empty")
    if not 0 < target_coverage_pct <= 100:
        raise ValueError("target_coverage_pct must be in (0, 100]")
    lang = Language.parse(language)
    catalog = catalog or PromptCatalog.default()
    prompt = catalog.render("extract_words", lang, corpus=corpus_text.strip())
    exchange = ChatExchange.user(prompt, temperature=0.0, model_id=model_id or getattr(llm_client, "model_id", ""))
    response = llm_client.chat(exchange)

    words = RareWordList.from_surfaces(parse_word_lines(response, lang), lang, source="llm-extraction")
    if not words.entries:
        raise EmptyList("LLM returned no rare words")

    policy = NormPolicy.for_language(lang)
    references = [line for line in corpus_text.splitlines() if line.strip()]
    entries = list(words.entries)
    while True:
        per_entry, total = coverage_counts(references, [e.surface for e in entries], policy)
        coverage = 100.0 * sum(per_entry) / total if total else 0.0
        if coverage < target_coverage_pct:
            break
        if len(entries) == 1:
            raise CoverageInfeasible(
                f"coverage {coverage:.2f}% with a single entry; cannot get below {target_coverage_pct}%"
            )
        top = max(range(len(entries)), key=lambda k: (per_entry[k], k))
        log.info("dropping %r (covers %d units) to reduce coverage", entries[top].surface, per_entry[top])
        del entries[top]
    return RareWordList(lang, tuple(entries), words.source)

"""Synthetic error-pair construction: words -> transcripts -> speech -> N-best.

For each rare word the LLM writes ``T`` sentences containing it, each is
synthesised by ``S`` speakers, and each utterance is recognised into an
``N``-best list.  Candidates whose 1-best already equals the sentence are
dropped; everything else (including errors on non-rare words only) is kept.
"""

from __future__ import annotations

import json
import logging
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from rareger.corpus import ErrorPairExample, HypothesisSet, RareWordList, dumps_record, read_jsonl
from rareger.errors import BuildAborted, ExportError, ServiceError, ShortGeneration
from rareger.phonetics import PhoneticScheme
from rareger.prompts import (
    GerRequest,
    PromptCatalog,
    build_ger_messages,
    build_transcript_gen_prompt,
    parse_generated_transcripts,
)
from rareger.services import ChatExchange, Clients
from rareger.store import sha256_hex
from rareger.text import Language, NormPolicy, tokenize

log = logging.getLogger(__name__)


class DegenerateSplit(UserWarning):
    pass


@dataclass(frozen=True)
class BuildConfig:
    T: int = 4
    S: int = 7
    N: int = 5
    split_ratio: tuple[int, int] = (4, 1)
    seed: int = 0
    phonetic_scheme: Optional[PhoneticScheme] = None
    language: Language = Language.EN
    max_retries: int = 2
    gen_temperature: float = 0.7
    workers: int = 4

    def __post_init__(self):
        if min(self.T, self.S, self.N) < 1:
            raise ValueError("T, S and N must all be >= 1")
        ratio = tuple(int(x) for x in self.split_ratio)
        if len(ratio) != 2 or min(ratio) < 1:
            raise ValueError("split_ratio needs two positive parts")
        object.__setattr__(self, "split_ratio", ratio)
        object.__setattr__(self, "language", Language.parse(self.language))
        if self.phonetic_scheme is not None:
            object.__setattr__(self, "phonetic_scheme", PhoneticScheme.parse(self.phonetic_scheme))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        d["language"] = self.language.value
        d["phonetic_scheme"] = None if self.phonetic_scheme is None else self.phonetic_scheme.value
        return d

    def replace(self, **kwargs) -> "BuildConfig":
        d = {**self.__dict__, **kwargs}
        return BuildConfig(**d)


@dataclass
class BuildReport:
    n_candidates: int = 0
    n_dropped_no_error: int = 0
    n_kept: int = 0
    n_retries: int = 0
    per_word: dict = field(default_factory=dict)
    skipped_words: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class BuildCheckpoint:
    """Append-only JSON-lines log of completed stages, replayed on resume."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self.transcripts: dict[str, tuple[list[str], int]] = {}
        self.skipped: dict[str, str] = {}
        self.asr: dict[tuple[str, int, int], list[dict]] = {}
        if self.path is not None and self.path.exists():
            for rec in read_jsonl(self.path):
                stage = rec["stage"]
                if stage == "transcripts":
                    self.transcripts[rec["word"]] = (rec["items"], rec["retries"])
                elif stage == "skipped":
                    self.skipped[rec["word"]] = rec["reason"]
                elif stage == "asr":
                    self.asr[(rec["word"], rec["t"], rec["s"])] = rec["nbest"]

    def _append(self, rec: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(dumps_record(rec) + "\n")
            fh.flush()

    def put_transcripts(self, word, items, retries):
        with self._lock:
            self.transcripts[word] = (list(items), retries)
            self._append({"stage": "transcripts", "word": word, "items": list(items), "retries": retries})

    def put_skipped(self, word, reason):
        with self._lock:
            self.skipped[word] = reason
            self._append({"stage": "skipped", "word": word, "reason": reason})

    def put_asr(self, word, t, s, nbest):
        with self._lock:
            self.asr[(word, t, s)] = nbest
            self._append({"stage": "asr", "word": word, "t": t, "s": s, "nbest": nbest})


def _generate_transcripts(entry, cfg, clients, catalog, policy, ckpt):
    if entry.surface in ckpt.transcripts:
        return ckpt.transcripts[entry.surface]
    if entry.surface in ckpt.skipped:
        return None, 0
    prompt = build_transcript_gen_prompt(entry.surface, cfg.T, cfg.language, entry.domain_hint, catalog)
    exchange = ChatExchange.user(prompt, temperature=cfg.gen_temperature)
    short = None
    for attempt in range(cfg.max_retries + 1):
        response = clients.chat.chat(exchange)
        try:
            items = parse_generated_transcripts(response, cfg.T, entry.surface, policy)
        except ShortGeneration as exc:
            short = exc
            continue
        ckpt.put_transcripts(entry.surface, items, attempt)
        return items, attempt
    log.warning("skipping %r: %s", entry.surface, short)
    ckpt.put_skipped(entry.surface, f"short generation ({short.found}/{cfg.T}) after {cfg.max_retries} retries")
    return None, cfg.max_retries


def _word_candidates(entry, cfg, clients, catalog, policy, ckpt):
    transcripts, retries = _generate_transcripts(entry, cfg, clients, catalog, policy, ckpt)
    if transcripts is None:
        return None, retries
    cands = []
    for t, reference in enumerate(transcripts, 1):
        for s in range(1, cfg.S + 1):
            nbest = ckpt.asr.get((entry.surface, t, s))
            if nbest is None:
                locator = clients.tts.synthesize(clients.tts.job(reference, s, cfg.language))
                result = clients.asr.transcribe(locator, cfg.N)
                nbest = [{"text": h.text, "score": h.score} for h in result.nbest]
                ckpt.put_asr(entry.surface, t, s, nbest)
            uid = f"{entry.surface}|t{t}|s{s}"
            cands.append((t, s, reference, HypothesisSet.from_dict({"utterance_id": uid, "hypotheses": nbest})))
    return cands, retries


def generate_pairs(words: RareWordList, cfg: BuildConfig, clients: Clients,
                   checkpoint: BuildCheckpoint | None = None,
                   catalog: PromptCatalog | None = None) -> tuple[list[ErrorPairExample], BuildReport]:
    """Build error-pair examples in (word, transcript, speaker) order."""
    catalog = catalog or clients.catalog or PromptCatalog.default()
    ckpt = checkpoint or BuildCheckpoint()
    policy = NormPolicy.for_language(cfg.language)
    entries = list(words.entries)

    def work(entry):
        return _word_candidates(entry, cfg, clients, catalog, policy, ckpt)

    try:
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            results = list(pool.map(work, entries))
    except ServiceError as exc:
        raise BuildAborted(f"service failure, partial state kept in {ckpt.path}: {exc}",
                           checkpoint=ckpt.path) from exc

    report = BuildReport()
    examples = []
    for entry, (cands, retries) in zip(entries, results):
        report.n_retries += retries
        if cands is None:
            report.skipped_words[entry.surface] = ckpt.skipped.get(entry.surface, "generation failed")
            continue
        kept = 0
        for t, s, reference, nbest in cands:
            if tokenize(nbest.best, policy) == tokenize(reference, policy):
                continue
            phonetic = None
            if cfg.phonetic_scheme is not None:
                phonetic = clients.phonetics.render(cfg.phonetic_scheme, nbest.best)
            examples.append(ErrorPairExample(reference, nbest, entry.surface, t, s, phonetic))
            kept += 1
        report.n_candidates += len(cands)
        report.n_kept += kept
        report.n_dropped_no_error += len(cands) - kept
        report.per_word[entry.surface] = {"candidates": len(cands), "kept": kept,
                                          "dropped": len(cands) - kept, "retries": retries}
    return examples, report


def split(examples, ratio=(4, 1), seed: int = 0):
    """Seeded shuffle split; each side keeps the input order."""
    a, b = (int(x) for x in ratio)
    if a < 1 or b < 1:
        raise ValueError("ratio parts must be positive")
    items = list(examples)
    n = len(items)
    if n < a + b:
        warnings.warn(f"{n} examples cannot be split {a}:{b}; everything goes to train", DegenerateSplit)
        return items, []
    n_val = max(1, int(round(n * b / (a + b))))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [x for i, x in enumerate(items) if i not in val_idx]
    val = [x for i, x in enumerate(items) if i in val_idx]
    return train, val


def finetune_record(example: ErrorPairExample, catalog: PromptCatalog, language=Language.EN,
                    include_metadata: bool = True) -> dict:
    lang = example.phonetic.language if example.phonetic is not None else Language.parse(language)
    messages = build_ger_messages(GerRequest(tuple(example.nbest.texts), example.phonetic, lang), catalog)
    messages.append({"role": "assistant", "content": example.reference})
    rec = {"messages": messages}
    if include_metadata:
        rec["metadata"] = example.to_dict()
    return rec


def export_finetune(examples, prompt_catalog: PromptCatalog | None, path, language=Language.EN,
                    include_metadata: bool = True) -> dict:
    """Write chat-format JSON lines and return a manifest with a content hash.

    ``include_metadata=False`` drops the per-record ``metadata`` block for
    vendors that reject unknown keys; such files cannot be read back as
    examples.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("nothing to export")
    catalog = prompt_catalog or PromptCatalog.default()
    body = "".join(dumps_record(finetune_record(e, catalog, language, include_metadata)) + "\n" for e in examples)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(body, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return {"path": str(path), "n_records": len(examples), "sha256": sha256_hex(body),
            "prompt_catalog_version": catalog.version}


def load_finetune(path) -> list[ErrorPairExample]:
    out = []
    for rec in read_jsonl(path):
        if "metadata" not in rec:
            raise ExportError(f"{path}: records carry no metadata; cannot rebuild examples")
        out.append(ErrorPairExample.from_dict(rec["metadata"]))
    return out


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")

"""Deterministic offline stand-ins for the chat LLM, TTS and ASR services.

The simulated TTS "audio" is a small JSON document naming the text and
speaker, so the simulated ASR can read the reference back and push it
through a :class:`~rareger.services.ConfusionModel`.  The simulated chat
backend recognises each prompt family from the catalog and answers it with
fixed rules.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter

import numpy as np

from rareger import kernels
from rareger.corpus import Hypothesis
from rareger.errors import ClientError
from rareger.phonetics import default_lexicon, japanese_reading, romanize_kana
from rareger.prompts import PromptCatalog, parse_ger_user_message
from rareger.services import ChatExchange, ConfusionModel, TtsJob
from rareger.store import canonical_json, sha256_hex
from rareger.text import Language

_BLOB_MAGIC = b"SIMTTS1\n"

EN_FRAMES = (
    "The doctor explained {w} to the patient this morning.",
    "We read a short report about {w} in the journal.",
    "Her family asked many questions about {w} yesterday.",
    "The lecture on {w} started later than planned.",
    "Nobody in the room had heard of {w} before.",
    "They added a new chapter about {w} to the book.",
    "The nurse wrote {w} on the chart before lunch.",
    "Our team spent the whole week studying {w}.",
    "A student asked the professor about {w} after class.",
    "The news story mentioned {w} twice.",
    "He finally understood {w} after the second example.",
    "The museum opened an exhibit about {w} last month.",
    "The patient was worried about {w} during the visit.",
    "Everyone at the meeting talked about {w} again.",
)

JA_FRAMES = (
    "医師は患者に{w}について説明した。",
    "新しい報告で{w}が取り上げられた。",
    "家族は{w}について多くの質問をした。",
    "{w}に関する講義が午後に始まった。",
    "看護師はカルテに{w}と書いた。",
    "学生は教授に{w}について尋ねた。",
    "今朝のニュースで{w}が話題になった。",
    "私たちは一週間かけて{w}を調べた。",
    "会議では{w}の話が何度も出た。",
    "{w}の検査結果は明日わかる。",
    "先生は{w}をわかりやすく説明した。",
    "患者は{w}のことを心配していた。",
)


def _stable_int(*parts) -> int:
    return int(sha256_hex(canonical_json([str(p) for p in parts]))[:15], 16)


def simulated_sentences(word: str, count: int, language=Language.EN) -> list[str]:
    """The k-th sentence depends only on (word, k), never on ``count``."""
    frames = JA_FRAMES if Language.parse(language) is Language.JA else EN_FRAMES
    offset = _stable_int("frames", word) % len(frames)
    return [frames[(offset + k) % len(frames)].format(w=word) for k in range(count)]


# -- TTS ---------------------------------------------------------------------------

class SimulatedTtsBackend:
    def __init__(self):
        self.calls = 0

    def synthesize(self, job: TtsJob) -> bytes:
        self.calls += 1
        return _BLOB_MAGIC + canonical_json(job.to_dict()).encode("utf-8")


def read_simulated_blob(audio: bytes) -> dict:
    if not audio.startswith(_BLOB_MAGIC):
        raise ClientError("simulated ASR can only decode simulated TTS blobs", status=415)
    return json.loads(audio[len(_BLOB_MAGIC):].decode("utf-8"))


# -- ASR ---------------------------------------------------------------------------

def _split_punct(raw: str) -> tuple[str, str, str]:
    start, end = 0, len(raw)
    while start < end and unicodedata.category(raw[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
        end -= 1
    return raw[:start], raw[start:end], raw[end:]


class SimulatedAsrBackend:
    """N-best from a noisy channel.

    Draws ``n`` corrupted copies of the reference plus one extra canonical
    draw, then ranks the copies by edit distance to the canonical one
    (ties by draw index).  Scores are negated distances.
    """

    def __init__(self, model: ConfusionModel):
        self.model = model
        self.calls = 0
        self._vocab = sorted(set(model.sub_table) | {c for v in model.sub_table.values() for c, _ in v})
        self._max_key = max((len(k) for k in model.sub_table), default=1)

    def transcribe(self, audio: bytes, n: int, language) -> list[Hypothesis]:
        meta = read_simulated_blob(audio)
        return self._nbest(meta["text"], n, Language.parse(meta.get("language", language)), sha256_hex(audio))

    def transcribe_text(self, text: str, n: int, language) -> list[Hypothesis]:
        return self._nbest(text, n, Language.parse(language), sha256_hex(text))

    def _nbest(self, text: str, n: int, language: Language, key: str) -> list[Hypothesis]:
        self.calls += 1
        key_int = int(key[:15], 16)
        draws = [self._draw(text, language, np.random.default_rng([self.model.seed, key_int, k]))
                 for k in range(n + 1)]
        canonical = draws[n]
        sep = "" if language is Language.JA else " "
        units = (lambda s: list(s)) if language is Language.JA else (lambda s: s.split())
        scored = []
        for k, toks in enumerate(draws[:n]):
            a, b = kernels.encode_pair(units(sep.join(toks)), units(sep.join(canonical)))
            scored.append((kernels.edit_distance(a, b), k, sep.join(toks)))
        scored.sort()
        return [Hypothesis(t, -float(d)) for d, _, t in scored]

    def _segments(self, text: str, language: Language):
        if language is Language.JA:
            s, i, out = text, 0, []
            while i < len(s):
                for k in range(min(self._max_key, len(s) - i), 0, -1):
                    if s[i:i + k] in self.model.sub_table:
                        out.append(("", s[i:i + k], ""))
                        i += k
                        break
                else:
                    out.append(("", s[i], ""))
                    i += 1
            return out
        return [_split_punct(raw) for raw in text.split()]

    def _draw(self, text: str, language: Language, rng) -> list[str]:
        m = self.model
        out = []
        for pre, core, post in self._segments(text, language):
            raw = pre + core + post
            r = rng.random()
            if r < m.p_sub:
                cands = m.sub_table.get(core.casefold() if language is Language.EN else core)
                if cands:
                    weights = np.array([w for _, w in cands])
                    pick = cands[int(rng.choice(len(cands), p=weights / weights.sum()))][0]
                    out.append(pre + pick + post)
                else:
                    out.append(raw)
            elif r < m.p_sub + m.p_del:
                continue
            elif r < m.p_sub + m.p_del + m.p_ins:
                out.append(raw)
                out.append(self._vocab[int(rng.integers(len(self._vocab)))] if self._vocab else core)
            else:
                out.append(raw)
        return out


# -- chat --------------------------------------------------------------------------

_EN_LSP_WORDS = {
    "the": "thuh", "a": "uh", "is": "iz", "was": "wuz", "of": "uhv", "to": "too", "you": "yoo",
    "sun": "sun", "son": "sun", "rising": "rahy-zing", "are": "ar", "one": "wun", "two": "too",
}
_EN_LSP_RULES = (
    ("tion", "shun"), ("ph", "f"), ("ck", "k"), ("qu", "kw"), ("x", "ks"), ("ee", "ee"),
    ("ea", "ee"), ("oo", "oo"), ("igh", "ahy"), ("ce", "se"), ("ci", "si"), ("wh", "w"),
)


def simple_pronunciation(text: str) -> str:
    """Rule-based stand-in for an LLM's simplified English pronunciation."""
    out = []
    for raw in text.split():
        w = _split_punct(raw)[1].casefold()
        if not w:
            continue
        if w in _EN_LSP_WORDS:
            out.append(_EN_LSP_WORDS[w])
            continue
        for src, dst in _EN_LSP_RULES:
            w = w.replace(src, dst)
        if len(w) > 3 and w.endswith("e") and not w.endswith("ee"):
            w = w[:-1]
        if len(w) > 2 and w.endswith("y"):
            w = w[:-1] + "ee"
        out.append(w)
    return " ".join(out)


_GOLDEN_LSP = {("EN", "the sun is rising"): "thuh sun iz rahy-zing"}


def _katakana(s: str) -> str:
    return "".join(chr(ord(c) + 0x60) if "ぁ" <= c <= "ゖ" else c for c in s)


class SimulatedChatBackend:
    """Answers transcript-generation, extraction, LSP/IPA and GER prompts.

    ``corrector`` (optional) is called as ``corrector(hypotheses, pronunciation)``
    for GER prompts; without it the 1-best is echoed back unchanged.
    """

    def __init__(self, catalog: PromptCatalog | None = None, corrector=None, extraction_limit: int = 30):
        self.catalog = catalog or PromptCatalog.default()
        self.corrector = corrector
        self.extraction_limit = extraction_limit
        self.calls = 0
        self._prefix = {}
        for lang in Language:
            for tid in ("lsp", "ipa", "extract_words"):
                try:
                    body = self.catalog.get(tid, lang).body
                except Exception:
                    continue
                self._prefix[(tid, lang)] = body.split("{")[0]
        self._ger_system = {self.catalog.render("ger_system", lang): lang for lang in Language}

    def complete(self, exchange: ChatExchange) -> str:
        self.calls += 1
        system = exchange.system
        if system is not None and system in self._ger_system:
            return self._ger(exchange.last_user, self._ger_system[system])
        prompt = exchange.last_user
        for (tid, lang), prefix in self._prefix.items():
            if prefix and prompt.startswith(prefix):
                payload = prompt[len(prefix):].strip()
                if tid == "lsp":
                    return self._lsp(payload, lang)
                if tid == "ipa":
                    return romanize_kana(japanese_reading(payload, default_lexicon("ja_reading")))
                return self._extract(payload, lang)
        gen = self._transcript_request(prompt)
        if gen is not None:
            word, count, lang = gen
            return "\n".join(f"{k}. {s}" for k, s in enumerate(simulated_sentences(word, count, lang), 1))
        return prompt.strip().splitlines()[-1]

    def _transcript_request(self, prompt: str):
        m = re.search(r"Provide (\d+) (?:different )?English sentences? .*?the term (.+?)(?:, which is a .*?)?\. ", prompt)
        if m:
            return m.group(2), int(m.group(1)), Language.EN
        m = re.search(r"「(.+?)」という語を含", prompt)
        if m:
            c = re.search(r"文を(\d+)個", prompt)
            return m.group(1), int(c.group(1)) if c else 1, Language.JA
        return None

    def _lsp(self, text: str, lang: Language) -> str:
        golden = _GOLDEN_LSP.get((lang.value, text))
        if golden:
            return golden
        if lang is Language.JA:
            return _katakana(japanese_reading(text, default_lexicon("ja_reading")))
        return simple_pronunciation(text)

    def _extract(self, corpus: str, lang: Language) -> str:
        if lang is Language.JA:
            runs = re.findall(r"[一-鿿゠-ヿ]{2,}", corpus)
            counts = Counter(runs)
            ranked = sorted(counts, key=lambda w: (counts[w], runs.index(w)))
            return "\n".join(ranked[: self.extraction_limit])
        common = default_lexicon("en_arpabet")
        order, counts = [], Counter()
        for line in corpus.splitlines():
            for pos, raw in enumerate(line.split()):
                w = _split_punct(raw)[1]
                if not w:
                    continue
                counts[w.casefold()] += 1
                proper = pos > 0 and w[:1].isupper()
                if (len(w) >= 9 or proper) and w.casefold() not in common and w not in order:
                    order.append(w)
        ranked = sorted(order, key=lambda w: (counts[w.casefold()], order.index(w)))
        return "\n".join(ranked[: self.extraction_limit])

    def _ger(self, user: str, lang: Language) -> str:
        hyps, pron = parse_ger_user_message(user, lang, self.catalog)
        if not hyps:
            return ""
        if self.corrector is not None:
            return self.corrector(hyps, pron)
        return hyps[0]


def simulated_clients(workdir, confusion: ConfusionModel, n_speakers: int = 7, language=Language.EN,
                      corrector=None, max_concurrency: int = 4, persist: bool = True):
    """Fully offline :class:`~rareger.services.Clients` rooted at ``workdir``."""
    from pathlib import Path

    from rareger.phonetics import PhoneticContext
    from rareger.services import AsrClient, ChatClient, Clients, RetryPolicy, TtsClient
    from rareger.store import BlobStore, JsonlCache

    root = Path(workdir)
    root.mkdir(parents=True, exist_ok=True)
    cache = (lambda name: JsonlCache(root / "cache" / f"{name}.jsonl")) if persist else (lambda name: JsonlCache())
    store = BlobStore(root / "store")
    retry = RetryPolicy(backoff_base=0.0)
    lang = Language.parse(language)
    catalog = PromptCatalog.default()
    chat = ChatClient(SimulatedChatBackend(catalog, corrector=corrector), model_id="simulated",
                      cache=cache("chat"), retry=retry, max_concurrency=max_concurrency)
    tts = TtsClient(SimulatedTtsBackend(), store, n_speakers, cache=cache("tts"), retry=retry,
                    max_concurrency=max_concurrency)
    asr = AsrClient(SimulatedAsrBackend(confusion), store, lang, cache=cache("asr"), retry=retry,
                    max_concurrency=max_concurrency)
    phon = PhoneticContext(language=lang, llm_client=chat, cache=cache("phonetic"), catalog=catalog)
    return Clients(chat, tts, asr, phon, catalog)

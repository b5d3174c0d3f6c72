"""Phonetic renderings of transcripts: IPA, TTS phonemes and LLM-simplified phonemes.

English IPA and ARPAbet come from lexicon lookups (``<word>\\t<phonemes>``
files; small bundled lexicons ship in ``rareger/data``).  Japanese TTS
phonemes are the Hepburn-style romanisation of a kana reading, with kanji
words resolved through a reading lexicon.  Japanese IPA and all LSP
renderings are delegated to an LLM and cached on disk.
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from rareger.errors import EmptyConversion
from rareger.store import JsonlCache, content_key
from rareger.text import Language


class PhoneticScheme(str, enum.Enum):
    IPA = "IPA"
    TTS_PHONEME = "TTS_PHONEME"
    LSP = "LSP"

    @classmethod
    def parse(cls, value) -> "PhoneticScheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        aliases = {"TTS": "TTS_PHONEME", "ARPABET": "TTS_PHONEME", "KANA": "TTS_PHONEME"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class PhoneticText:
    scheme: PhoneticScheme
    language: Language
    text: str
    source_text: str

    def __post_init__(self):
        object.__setattr__(self, "scheme", PhoneticScheme.parse(self.scheme))
        object.__setattr__(self, "language", Language.parse(self.language))
        if self.source_text.strip() and not self.text.strip():
            raise ValueError("phonetic text is empty for a non-empty source")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "language": self.language.value,
            "text": self.text,
            "source_text": self.source_text,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "PhoneticText":
        return cls(rec["scheme"], rec["language"], rec["text"], rec["source_text"])


class OovPolicy(str, enum.Enum):
    PASS_THROUGH = "PASS_THROUGH"
    SPELL_OUT = "SPELL_OUT"


@dataclass
class G2pLexicon:
    entries: dict[str, str]
    oov_policy: OovPolicy = OovPolicy.PASS_THROUGH
    name: str = ""

    def __post_init__(self):
        clean = {}
        for word, phones in self.entries.items():
            key = unicodedata.normalize("NFKC", word).casefold().strip()
            if not key or not phones.strip():
                raise ValueError(f"lexicon {self.name!r}: empty key or value for {word!r}")
            clean.setdefault(key, phones.strip())
        self.entries = clean

    @classmethod
    def load(cls, path, oov_policy=OovPolicy.PASS_THROUGH) -> "G2pLexicon":
        return cls._parse(Path(path).read_text(encoding="utf-8"), oov_policy, str(path))

    @classmethod
    def bundled(cls, name: str, oov_policy=OovPolicy.PASS_THROUGH) -> "G2pLexicon":
        """One of ``en_ipa``, ``en_arpabet`` or ``ja_reading``."""
        text = resources.files("rareger.data").joinpath(f"{name}.tsv").read_text(encoding="utf-8")
        return cls._parse(text, oov_policy, name)

    @classmethod
    def _parse(cls, text: str, oov_policy, name: str) -> "G2pLexicon":
        entries = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            word, sep, phones = line.partition("\t")
            if not sep:
                raise ValueError(f"lexicon {name}: expected <word><TAB><phonemes>, got {line!r}")
            entries.setdefault(word, phones)
        return cls(entries, OovPolicy(oov_policy), name)

    def lookup(self, word: str) -> Optional[str]:
        return self.entries.get(unicodedata.normalize("NFKC", word).casefold())

    def __contains__(self, word: str) -> bool:
        return self.lookup(word) is not None

    def __len__(self) -> int:
        return len(self.entries)


def _strip_punct(token: str) -> str:
    return "".join(
        c for i, c in enumerate(token)
        if not unicodedata.category(c).startswith("P") or (c in "'-" and 0 < i < len(token) - 1)
    )


def _convert_words(text: str, lexicon: G2pLexicon, render) -> str:
    out = []
    for raw in text.split():
        word = _strip_punct(raw)
        if not word:
            continue
        phones = lexicon.lookup(word)
        if phones is None and "-" in word:
            parts = [lexicon.lookup(p) for p in word.split("-") if p]
            if parts and all(p is not None for p in parts):
                out.extend(render(p) for p in parts)
                continue
        if phones is not None:
            out.append(render(phones))
        elif lexicon.oov_policy is OovPolicy.SPELL_OUT:
            letters = [lexicon.lookup(ch) for ch in word.casefold() if ch.isalnum()]
            out.append("".join(render(p) for p in letters if p is not None) or raw)
        else:
            out.append(raw)
    return " ".join(out)


# -- IPA ---------------------------------------------------------------------

def to_ipa(text: str, lexicon: G2pLexicon | None = None, language=Language.EN,
           llm_client=None, cache: JsonlCache | None = None, catalog=None) -> PhoneticText:
    lang = Language.parse(language)
    if lang is Language.JA:
        if not text.strip():
            return PhoneticText(PhoneticScheme.IPA, lang, "", text)
        return _llm_convert("ipa", PhoneticScheme.IPA, text, lang, llm_client, cache, catalog)
    lexicon = lexicon if lexicon is not None else default_lexicon("en_ipa")
    return PhoneticText(PhoneticScheme.IPA, lang, _convert_words(text, lexicon, lambda p: p), text)


# -- TTS phonemes --------------------------------------------------------------

def to_tts_phoneme(text: str, language=Language.EN, lexicon: G2pLexicon | None = None) -> PhoneticText:
    """ARPAbet (stress digits kept, phones of a word run together) for English,
    romanised kana reading for Japanese."""
    lang = Language.parse(language)
    if lang is Language.EN:
        lexicon = lexicon if lexicon is not None else default_lexicon("en_arpabet")
        rendered = _convert_words(text, lexicon, lambda p: "".join(p.split()))
    else:
        lexicon = lexicon if lexicon is not None else default_lexicon("ja_reading")
        rendered = romanize_kana(japanese_reading(text, lexicon))
    return PhoneticText(PhoneticScheme.TTS_PHONEME, lang, rendered, text)


def japanese_reading(text: str, lexicon: G2pLexicon) -> str:
    """Katakana reading via greedy longest-match over ``lexicon``; unknown
    characters are kept as they are."""
    s = unicodedata.normalize("NFKC", text)
    max_len = max((len(k) for k in lexicon.entries), default=1)
    out = []
    i = 0
    while i < len(s):
        for k in range(min(max_len, len(s) - i), 0, -1):
            reading = lexicon.entries.get(s[i:i + k].casefold())
            if reading is not None:
                out.append(reading)
                i += k
                break
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


_KANA = {
    "あ": "a", "い": "i", "う": "u", "え": "e", "お": "o",
    "か": "ka", "き": "ki", "く": "ku", "け": "ke", "こ": "ko",
    "が": "ga", "ぎ": "gi", "ぐ": "gu", "げ": "ge", "ご": "go",
    "さ": "sa", "し": "shi", "す": "su", "せ": "se", "そ": "so",
    "ざ": "za", "じ": "ji", "ず": "zu", "ぜ": "ze", "ぞ": "zo",
    "た": "ta", "ち": "chi", "つ": "tsu", "て": "te", "と": "to",
    "だ": "da", "ぢ": "ji", "づ": "zu", "で": "de", "ど": "do",
    "な": "na", "に": "ni", "ぬ": "nu", "ね": "ne", "の": "no",
    "は": "ha", "ひ": "hi", "ふ": "fu", "へ": "he", "ほ": "ho",
    "ば": "ba", "び": "bi", "ぶ": "bu", "べ": "be", "ぼ": "bo",
    "ぱ": "pa", "ぴ": "pi", "ぷ": "pu", "ぺ": "pe", "ぽ": "po",
    "ま": "ma", "み": "mi", "む": "mu", "め": "me", "も": "mo",
    "や": "ya", "ゆ": "yu", "よ": "yo",
    "ら": "ra", "り": "ri", "る": "ru", "れ": "re", "ろ": "ro",
    "わ": "wa", "ゐ": "i", "ゑ": "e", "を": "o", "ん": "n", "ゔ": "vu",
    "ぁ": "a", "ぃ": "i", "ぅ": "u", "ぇ": "e", "ぉ": "o", "ゎ": "wa",
}
_SMALL_Y = {"ゃ": "a", "ゅ": "u", "ょ": "o"}
_SMALL_V = {"ぁ": "a", "ぃ": "i", "ぅ": "u", "ぇ": "e", "ぉ": "o"}
_VOWELS = "aeiou"


def _to_hiragana(s: str) -> str:
    return "".join(chr(ord(c) - 0x60) if "ァ" <= c <= "ヶ" else c for c in s)


def romanize_kana(kana: str) -> str:
    """Hepburn-style romanisation; ``ー`` repeats the previous vowel and
    ``っ`` doubles the next consonant.  Non-kana characters pass through."""
    s = _to_hiragana(unicodedata.normalize("NFKC", kana))
    syllables: list[str] = []
    geminate = False
    for ch in s:
        if ch == "っ":
            geminate = True
            continue
        if ch in _SMALL_Y and syllables and syllables[-1].endswith("i") and len(syllables[-1]) > 1:
            prev = syllables[-1][:-1]
            syllables[-1] = prev + _SMALL_Y[ch] if prev.endswith(("sh", "ch", "j")) else prev + "y" + _SMALL_Y[ch]
            continue
        if ch in _SMALL_V and syllables and syllables[-1][-1:] in _VOWELS:
            prev = syllables[-1]
            syllables[-1] = ("w" if prev == "u" else prev[:-1]) + _SMALL_V[ch]
            continue
        if ch == "ー":
            vowel = next((c for c in reversed(syllables[-1]) if c in _VOWELS), "") if syllables else ""
            syllables.append(vowel)
            continue
        roman = _KANA.get(ch)
        if roman is None:
            syllables.append(" " if unicodedata.category(ch).startswith(("P", "Z")) else ch)
            geminate = False
            continue
        if geminate:
            roman = ("t" + roman) if roman.startswith("ch") else roman[0] + roman
            geminate = False
        syllables.append(roman)
    return " ".join("".join(syllables).split())


# -- LLM-backed conversions ----------------------------------------------------

_FENCE = re.compile(r"```[^\n]*\n?(.*?)```", re.S)
_LABEL = re.compile(r"^(?:simplified\s+)?(?:pronunciation|ipa|output|answer|発音)\s*[:：]\s*", re.I)
_QUOTES = "\"'`“”‘’「」*"


def trim_llm_text(response: str) -> str:
    """Strip code fences, a leading label and surrounding quotes/markup."""
    text = response.strip()
    m = _FENCE.search(text)
    if m:
        text = m.group(1)
    text = " ".join(text.split())
    prev = None
    while text != prev:
        prev = text
        text = _LABEL.sub("", text).strip().strip(_QUOTES).strip()
    return text


def lsp_cache_key(scheme, language, text: str) -> str:
    return content_key(PhoneticScheme.parse(scheme).value, Language.parse(language).value, text)


def _llm_convert(template_id, scheme, text, lang, llm_client, cache, catalog) -> PhoneticText:
    from rareger.prompts import PromptCatalog
    from rareger.services import ChatExchange

    key = lsp_cache_key(scheme, lang, text)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return PhoneticText.from_dict(hit)
    if llm_client is None:
        raise ValueError(f"{scheme.value} conversion for {lang.value} needs an LLM client")
    catalog = catalog or PromptCatalog.default()
    prompt = catalog.render(template_id, lang, text=text)
    response = llm_client.chat(ChatExchange.user(prompt, temperature=0.0,
                                                 model_id=getattr(llm_client, "model_id", "")))
    rendered = trim_llm_text(response)
    if not rendered:
        raise EmptyConversion(f"empty {scheme.value} conversion for {text!r}")
    result = PhoneticText(scheme, lang, rendered, text)
    if cache is not None:
        cache.put(key, result.to_dict())
    return result


def to_lsp(text: str, language, llm_client, cache: JsonlCache | None = None, catalog=None) -> PhoneticText:
    """LLM-based simplified pronunciation of ``text`` (one call, then cached)."""
    if not text.strip():
        raise ValueError("to_lsp needs non-empty text")
    return _llm_convert("lsp", PhoneticScheme.LSP, text, Language.parse(language), llm_client, cache, catalog)


def golden_lsp_path() -> Path:
    return Path(str(resources.files("rareger.data").joinpath("lsp_golden.jsonl")))


_DEFAULT_LEXICONS: dict[str, G2pLexicon] = {}


def default_lexicon(name: str) -> G2pLexicon:
    if name not in _DEFAULT_LEXICONS:
        _DEFAULT_LEXICONS[name] = G2pLexicon.bundled(name)
    return _DEFAULT_LEXICONS[name]


@dataclass
class PhoneticContext:
    """Everything needed to render a 1-best hypothesis in any scheme."""

    language: Language = Language.EN
    ipa_lexicon: Optional[G2pLexicon] = None
    tts_lexicon: Optional[G2pLexicon] = None
    llm_client: object = None
    cache: Optional[JsonlCache] = None
    catalog: object = None

    def render(self, scheme, text: str) -> PhoneticText:
        scheme = PhoneticScheme.parse(scheme)
        if scheme is PhoneticScheme.IPA:
            return to_ipa(text, self.ipa_lexicon, self.language, self.llm_client, self.cache, self.catalog)
        if scheme is PhoneticScheme.TTS_PHONEME:
            return to_tts_phoneme(text, self.language, self.tts_lexicon)
        return to_lsp(text, self.language, self.llm_client, self.cache, self.catalog)

"""Language tags, text normalisation and rare-word span matching."""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass


class Language(str, enum.Enum):
    EN = "EN"
    JA = "JA"

    @classmethod
    def parse(cls, value) -> "Language":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unsupported language tag {value!r}; expected one of EN, JA") from None


class Unit(str, enum.Enum):
    WORD = "WORD"
    CHAR = "CHAR"


@dataclass(frozen=True)
class NormPolicy:
    unit: Unit = Unit.WORD
    casefold: bool = True
    strip_punct: bool = True
    collapse_whitespace: bool = True

    @classmethod
    def for_language(cls, language) -> "NormPolicy":
        """WER policy for English, CER policy for Japanese."""
        if Language.parse(language) is Language.JA:
            return cls(unit=Unit.CHAR)
        return cls(unit=Unit.WORD)


_WS = re.compile(r"\s+")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_outer_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def normalize_entry(surface: str, language) -> str:
    """Canonical form of a rare-word list entry.

    English: NFKC, casefold, outer punctuation stripped, inner whitespace
    collapsed.  Japanese: NFKC and whitespace trim only.
    """
    lang = Language.parse(language)
    s = unicodedata.normalize("NFKC", surface).strip()
    if lang is Language.EN:
        s = unicodedata.normalize("NFKC", s.casefold())
        prev = None
        while s != prev:
            prev = s
            s = _WS.sub(" ", _strip_outer_punct(s.strip())).strip()
    return s


def tokenize(text: str, policy: NormPolicy) -> list[str]:
    """Normalised scoring units (words or characters) of ``text``."""
    toks = _tokenize_once(text, policy)
    # dropping spaces or punctuation can let combining marks attach to a new
    # base character, so repeat until the rendering is stable
    for _ in range(4):
        again = _tokenize_once(render(toks, policy), policy)
        if again == toks:
            break
        toks = again
    return toks


def _tokenize_once(text: str, policy: NormPolicy) -> list[str]:
    s = unicodedata.normalize("NFKC", text)
    if policy.casefold:
        s = unicodedata.normalize("NFKC", s.casefold())
    if policy.unit is Unit.CHAR:
        chars = [c for c in s if not c.isspace()]
        if policy.strip_punct:
            chars = [c for c in chars if not _is_punct(c)]
        return chars
    if policy.strip_punct:
        # apostrophes survive inside words ("don't"), other punctuation splits
        s = "".join(" " if _is_punct(c) and c != "'" else c for c in s)
        toks = [t.strip("'") for t in s.split()]
        return [t for t in toks if t]
    if policy.collapse_whitespace:
        return s.split()
    return [t for t in s.split(" ") if t]


def render(tokens, policy: NormPolicy) -> str:
    return ("" if policy.unit is Unit.CHAR else " ").join(tokens)


def normalize_text(text: str, policy: NormPolicy) -> str:
    return render(tokenize(text, policy), policy)


class SpanMatcher:
    """Greedy, longest-first, non-overlapping matcher for multi-token entries."""

    def __init__(self, entries, policy: NormPolicy):
        self.policy = policy
        self.entries = []
        self._by_first: dict[str, list[tuple[int, tuple[str, ...]]]] = {}
        for idx, surface in enumerate(entries):
            toks = tuple(tokenize(surface, policy))
            self.entries.append(toks)
            if toks:
                self._by_first.setdefault(toks[0], []).append((idx, toks))
        for cands in self._by_first.values():
            cands.sort(key=lambda c: (-len(c[1]), c[0]))

    def find(self, tokens) -> list[tuple[int, int, int]]:
        """Return ``(start, end, entry_index)`` for every match in ``tokens``."""
        out = []
        i, n = 0, len(tokens)
        while i < n:
            hit = None
            for idx, toks in self._by_first.get(tokens[i], ()):
                k = len(toks)
                if i + k <= n and tuple(tokens[i:i + k]) == toks:
                    hit = (i, i + k, idx)
                    break
            if hit:
                out.append(hit)
                i = hit[1]
            else:
                i += 1
        return out

    def contains(self, tokens, entry_index: int) -> bool:
        toks = self.entries[entry_index]
        k = len(toks)
        if k == 0:
            return False
        return any(tuple(tokens[i:i + k]) == toks for i in range(len(tokens) - k + 1))


def contains_term(text: str, term: str, policy: NormPolicy) -> bool:
    """Whether ``term`` occurs in ``text`` as a contiguous unit span."""
    return SpanMatcher([term], policy).contains(tokenize(text, policy), 0)

"""Alignment and scoring: WER, CER, rare-word recall/precision/F1, coverage."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from rareger import kernels
from rareger.text import Language, NormPolicy, SpanMatcher, Unit, tokenize

__all__ = [
    "OpKind",
    "AlignOp",
    "Alignment",
    "NormPolicy",
    "Unit",
    "RareWordScore",
    "align",
    "edit_distance",
    "wer",
    "cer",
    "error_counts",
    "rare_word_scores",
    "rare_word_coverage",
]


class OpKind(str, enum.Enum):
    MATCH = "MATCH"
    SUB = "SUB"
    DEL = "DEL"
    INS = "INS"


_CODE_TO_KIND = {
    kernels.MATCH: OpKind.MATCH,
    kernels.SUB: OpKind.SUB,
    kernels.DEL: OpKind.DEL,
    kernels.INS: OpKind.INS,
}


@dataclass(frozen=True)
class AlignOp:
    kind: OpKind
    ref_token: Optional[str] = None
    hyp_token: Optional[str] = None


@dataclass(frozen=True)
class Alignment:
    ops: tuple[AlignOp, ...]
    distance: int

    def ref_tokens(self) -> list[str]:
        return [op.ref_token for op in self.ops if op.kind is not OpKind.INS]

    def hyp_tokens(self) -> list[str]:
        return [op.hyp_token for op in self.ops if op.kind is not OpKind.DEL]


def align(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> Alignment:
    """Minimum edit-distance alignment with unit costs.

    Backtrace preference on ties is diagonal (match/substitution), then
    deletion, then insertion, so the script is deterministic.
    """
    a, b = kernels.encode_pair(ref_tokens, hyp_tokens)
    dist, codes = kernels.align_codes(a, b)
    ops = []
    i = j = 0
    for c in codes:
        kind = _CODE_TO_KIND[int(c)]
        if kind is OpKind.DEL:
            ops.append(AlignOp(kind, ref_tokens[i], None))
            i += 1
        elif kind is OpKind.INS:
            ops.append(AlignOp(kind, None, hyp_tokens[j]))
            j += 1
        else:
            ops.append(AlignOp(kind, ref_tokens[i], hyp_tokens[j]))
            i += 1
            j += 1
    return Alignment(tuple(ops), dist)


def edit_distance(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> int:
    a, b = kernels.encode_pair(ref_tokens, hyp_tokens)
    return kernels.edit_distance(a, b)


def error_counts(reference: str, hypothesis: str, policy: NormPolicy) -> tuple[int, int]:
    """``(edit distance, reference length)`` in the policy's unit."""
    ref = tokenize(reference, policy)
    hyp = tokenize(hypothesis, policy)
    return edit_distance(ref, hyp), len(ref)


def wer(reference: str, hypothesis: str, policy: NormPolicy | None = None) -> float:
    policy = policy or NormPolicy(unit=Unit.WORD)
    if policy.unit is not Unit.WORD:
        raise ValueError("wer needs a WORD-unit policy; use cer for character scoring")
    dist, n = error_counts(reference, hypothesis, policy)
    return dist / max(1, n)


def cer(reference: str, hypothesis: str, policy: NormPolicy | None = None) -> float:
    policy = policy or NormPolicy(unit=Unit.CHAR)
    if policy.unit is not Unit.CHAR:
        raise ValueError("cer needs a CHAR-unit policy; use wer for word scoring")
    dist, n = error_counts(reference, hypothesis, policy)
    return dist / max(1, n)


@dataclass(frozen=True)
class RareWordScore:
    n_ref_occurrences: int
    n_hyp_occurrences: int
    n_correct: int

    @property
    def recall(self) -> Optional[float]:
        if self.n_ref_occurrences == 0:
            return None
        return self.n_correct / self.n_ref_occurrences

    @property
    def precision(self) -> Optional[float]:
        if self.n_hyp_occurrences == 0:
            return None
        return self.n_correct / self.n_hyp_occurrences

    @property
    def f1(self) -> Optional[float]:
        r, p = self.recall, self.precision
        if r is None or p is None:
            return None
        if r + p == 0:
            return 0.0
        return 2 * r * p / (r + p)

    def __add__(self, other: "RareWordScore") -> "RareWordScore":
        return RareWordScore(
            self.n_ref_occurrences + other.n_ref_occurrences,
            self.n_hyp_occurrences + other.n_hyp_occurrences,
            self.n_correct + other.n_correct,
        )


def _surfaces(words) -> list[str]:
    entries = getattr(words, "entries", None)
    if entries is not None:
        return [e.surface for e in entries]
    return [w if isinstance(w, str) else w.surface for w in words]


def _check_language(words, policy: NormPolicy) -> None:
    lang = getattr(words, "language", None)
    if lang is None:
        return
    expected = Unit.CHAR if Language.parse(lang) is Language.JA else Unit.WORD
    if policy.unit is not expected:
        raise ValueError(f"{Language.parse(lang).value} rare-word list scored with a {policy.unit.value} policy")


def _correct_spans(ref, hyp, ref_occ, hyp_occ) -> int:
    if not ref_occ:
        return 0
    ali = align(ref, hyp)
    # op index of each reference position, and hyp cursor before each op
    ref_op = [0] * len(ref)
    hyp_at = [0] * (len(ali.ops) + 1)
    i = j = 0
    for k, op in enumerate(ali.ops):
        hyp_at[k] = j
        if op.kind is not OpKind.INS:
            ref_op[i] = k
            i += 1
        if op.kind is not OpKind.DEL:
            j += 1
    hyp_at[len(ali.ops)] = j
    hyp_spans = set(hyp_occ)
    correct = 0
    for start, end, idx in ref_occ:
        k0, k1 = ref_op[start], ref_op[end - 1]
        if all(ali.ops[k].kind is OpKind.MATCH for k in range(k0, k1 + 1)):
            if (hyp_at[k0], hyp_at[k1] + 1, idx) in hyp_spans:
                correct += 1
    return correct


def rare_word_scores(pairs: Iterable[tuple[str, str]], words, policy: NormPolicy) -> RareWordScore:
    """Per-occurrence rare-word counts over (reference, hypothesis) pairs.

    A reference occurrence counts as correct when its aligned hypothesis span
    is an all-match run that is itself a detected occurrence of the same entry.
    """
    _check_language(words, policy)
    matcher = SpanMatcher(_surfaces(words), policy)
    n_ref = n_hyp = n_ok = 0
    for reference, hypothesis in pairs:
        ref = tokenize(reference, policy)
        hyp = tokenize(hypothesis, policy)
        ref_occ = matcher.find(ref)
        hyp_occ = matcher.find(hyp)
        n_ref += len(ref_occ)
        n_hyp += len(hyp_occ)
        n_ok += _correct_spans(ref, hyp, ref_occ, hyp_occ)
    return RareWordScore(n_ref, n_hyp, n_ok)


def coverage_counts(references: Iterable[str], words, policy: NormPolicy) -> tuple[list[int], int]:
    """Units covered per entry and total units across ``references``."""
    surfaces = _surfaces(words)
    matcher = SpanMatcher(surfaces, policy)
    per_entry = [0] * len(surfaces)
    total = 0
    for text in references:
        toks = tokenize(text, policy)
        total += len(toks)
        for start, end, idx in matcher.find(toks):
            per_entry[idx] += end - start
    return per_entry, total


def rare_word_coverage(references: Sequence[str], words, policy: NormPolicy) -> float:
    """Percentage of reference units that fall inside rare-word matches."""
    if not references:
        raise ValueError("coverage needs at least one reference")
    per_entry, total = coverage_counts(references, words, policy)
    if total == 0:
        return 0.0
    return 100.0 * sum(per_entry) / total

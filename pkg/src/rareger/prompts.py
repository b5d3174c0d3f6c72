"""Prompt catalog plus builders/parsers for every LLM exchange in the pipeline."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from rareger.errors import EmptyCorrection, ShortGeneration, TemplateError
from rareger.phonetics import PhoneticText
from rareger.text import Language, NormPolicy, contains_term, normalize_text


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    language: Language
    body: str

    @property
    def required_placeholders(self) -> frozenset[str]:
        names = set()
        for _, field_name, _, _ in string.Formatter().parse(self.body):
            if field_name is not None:
                if not field_name.isidentifier():
                    raise TemplateError(f"template {self.id}: bad placeholder {{{field_name}}}")
                names.add(field_name)
        return frozenset(names)

    def render(self, **bindings) -> str:
        missing = self.required_placeholders - bindings.keys()
        if missing:
            raise TemplateError(f"template {self.id}/{self.language.value}: unbound {sorted(missing)}")
        return self.body.format_map({k: bindings[k] for k in self.required_placeholders})


class PromptCatalog:
    """Versioned set of templates keyed by ``(id, language)``."""

    def __init__(self, templates, version: str = "1"):
        self.version = str(version)
        self._templates = {}
        for t in templates:
            key = (t.id, t.language)
            if key in self._templates:
                raise TemplateError(f"duplicate template {t.id}/{t.language.value}")
            self._templates[key] = t

    @classmethod
    def load(cls, path) -> "PromptCatalog":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls._from_data(data)

    @classmethod
    def default(cls) -> "PromptCatalog":
        text = resources.files("rareger.data").joinpath("prompt_catalog.json").read_text(encoding="utf-8")
        return cls._from_data(json.loads(text))

    @classmethod
    def _from_data(cls, data) -> "PromptCatalog":
        templates = [
            PromptTemplate(t["id"], Language.parse(t["language"]), t["body"]) for t in data["templates"]
        ]
        return cls(templates, data.get("version", "1"))

    def get(self, template_id: str, language) -> PromptTemplate:
        key = (template_id, Language.parse(language))
        try:
            return self._templates[key]
        except KeyError:
            raise TemplateError(f"no template {template_id!r} for {key[1].value}") from None

    def render(self, template_id: str, language, **bindings) -> str:
        return self.get(template_id, language).render(**bindings)

    def ids(self) -> list[tuple[str, str]]:
        return sorted((i, lang.value) for i, lang in self._templates)


# -- transcript generation -----------------------------------------------------

def build_transcript_gen_prompt(word: str, count: int, language, domain_hint: Optional[str] = None,
                                catalog: PromptCatalog | None = None) -> str:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not word.strip():
        raise ValueError("word must be non-empty")
    catalog = catalog or PromptCatalog.default()
    clause = ""
    if domain_hint:
        clause = catalog.render("domain_clause", language, domain_hint=domain_hint)
    template_id = "transcript_gen" if count > 1 else "transcript_gen_single"
    return catalog.render(template_id, language, count=count, word=word, domain_clause=clause)


_NUMBERING = re.compile(r"^\s*(?:\(?\d+\s*[.):）．]|[-*•・])\s*")
_QUOTES = "\"'`“”‘’「」『』*"


def _clean_item(line: str) -> str:
    item, prev = line.strip(), None
    while item != prev:
        prev = item
        item = _NUMBERING.sub("", item).strip().strip(_QUOTES).strip()
    return item


def parse_generated_transcripts(llm_response: str, expected_count: int, word: str,
                                policy: NormPolicy) -> list[str]:
    """Sentences from a numbered/bulleted LLM answer that contain ``word``."""
    if expected_count < 1:
        raise ValueError("expected_count must be >= 1")
    found, seen = [], set()
    for line in llm_response.splitlines():
        item = _clean_item(line)
        if not item or not contains_term(item, word, policy):
            continue
        key = normalize_text(item, policy)
        if key in seen:
            continue
        seen.add(key)
        found.append(item)
        if len(found) == expected_count:
            return found
    raise ShortGeneration(len(found), found)


# -- GER correction ------------------------------------------------------------

@dataclass(frozen=True)
class GerRequest:
    nbest: tuple[str, ...]
    phonetic: Optional[PhoneticText] = None
    language: Language = Language.EN

    def __post_init__(self):
        object.__setattr__(self, "nbest", tuple(self.nbest))
        object.__setattr__(self, "language", Language.parse(self.language))
        if not self.nbest:
            raise ValueError("GerRequest needs at least one hypothesis")


def build_ger_messages(request: GerRequest, catalog: PromptCatalog | None = None) -> list[dict]:
    """System + user messages; hypotheses in rank order, then the optional
    pronunciation line.  Scores are never shown."""
    catalog = catalog or PromptCatalog.default()
    lang = request.language
    lines = [catalog.render("ger_hypotheses_header", lang)]
    for rank, text in enumerate(request.nbest, 1):
        lines.append(f"{rank}. {' '.join(text.split())}")
    if request.phonetic is not None:
        label = catalog.render("ger_pronunciation_label", lang)
        lines.append(f"{label} {' '.join(request.phonetic.text.split())}")
    return [
        {"role": "system", "content": catalog.render("ger_system", lang)},
        {"role": "user", "content": "\n".join(lines)},
    ]


def parse_ger_user_message(content: str, language=Language.EN,
                           catalog: PromptCatalog | None = None) -> tuple[list[str], Optional[str]]:
    """Inverse of the user message layout: ``(hypotheses, pronunciation)``."""
    catalog = catalog or PromptCatalog.default()
    label = catalog.render("ger_pronunciation_label", language)
    hyps, pron = [], None
    for line in content.splitlines():
        m = re.match(r"^(\d+)\. (.*)$", line)
        if m:
            hyps.append(m.group(2))
        elif line.startswith(label):
            pron = line[len(label):].strip()
    return hyps, pron


_FENCE = re.compile(r"```[^\n]*\n?(.*?)```", re.S)
_LABEL = re.compile(
    r"^(?:corrected(?:\s+(?:transcript|transcription|text|sentence))?|correction|output|answer|"
    r"final(?:\s+answer)?|transcript(?:ion)?|訂正後?|修正後?|回答)\s*[:：]\s*",
    re.I,
)


def parse_ger_response(llm_response: str) -> str:
    text = llm_response.strip()
    fenced = _FENCE.search(text)
    if fenced:
        text = fenced.group(1)
    line = next((ln for ln in text.splitlines() if ln.strip()), "")
    prev = None
    while line != prev:
        prev = line
        line = _LABEL.sub("", line.strip())
        line = line.strip(_QUOTES).strip()
    line = " ".join(line.split())
    if not line:
        raise EmptyCorrection("no transcript in the LLM response")
    return line

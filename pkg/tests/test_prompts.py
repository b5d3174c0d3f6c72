import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rareger.errors import EmptyCorrection, ShortGeneration, TemplateError
from rareger.phonetics import PhoneticScheme, PhoneticText
from rareger.prompts import (
    GerRequest,
    PromptCatalog,
    PromptTemplate,
    build_ger_messages,
    build_transcript_gen_prompt,
    parse_ger_response,
    parse_ger_user_message,
    parse_generated_transcripts,
)
from rareger.text import Language, NormPolicy, contains_term

EN = NormPolicy.for_language("EN")
LSP = PhoneticText(PhoneticScheme.LSP, Language.EN, "thuh sun iz rahy-zing", "the sun is rising")


def test_transcript_prompt_with_domain_hint():
    p = build_transcript_gen_prompt("anemia", 5, "EN", "medical term")
    assert ("Provide 5 different English sentences in various contexts that include the term anemia, "
            "which is a medical term.") in p


def test_transcript_prompt_singular_without_domain():
    p = build_transcript_gen_prompt("anemia", 1, "EN")
    assert "1 English sentence" in p and "sentences" not in p
    assert "which is" not in p


def test_transcript_prompt_japanese_variant():
    p = build_transcript_gen_prompt("X", 4, "JA")
    assert "「X」" in p and "4個" in p
    assert "{" not in p


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcdefgh ", min_size=1, max_size=10).filter(str.strip), st.integers(1, 20),
       st.text(alphabet="abcdefgh ", min_size=1, max_size=10).filter(str.strip), st.integers(1, 20))
def test_rendering_is_injective(w1, c1, w2, c2):
    if (w1, c1) != (w2, c2):
        assert build_transcript_gen_prompt(w1, c1, "EN") != build_transcript_gen_prompt(w2, c2, "EN")


def test_unbound_placeholder_raises():
    t = PromptTemplate("x", Language.EN, "hello {name} from {place}")
    assert t.required_placeholders == {"name", "place"}
    with pytest.raises(TemplateError):
        t.render(name="a")


def test_catalog_covers_both_languages():
    cat = PromptCatalog.default()
    for tid in ("transcript_gen", "transcript_gen_single", "domain_clause", "lsp", "extract_words",
                "ger_system", "ger_hypotheses_header", "ger_pronunciation_label"):
        for lang in ("EN", "JA"):
            cat.get(tid, lang)
    with pytest.raises(TemplateError):
        cat.get("ipa", "EN")


def test_lsp_template_is_verbatim_instruction():
    cat = PromptCatalog.default()
    assert cat.render("lsp", "EN", text="x").startswith("Convert the English text to simplified pronunciation.")


# -- transcript parsing --------------------------------------------------------------------------

def test_parse_two_clean_sentences():
    out = parse_generated_transcripts("1. The anemia worsened.\n2. anemia is common.", 2, "anemia", EN)
    assert out == ["The anemia worsened.", "anemia is common."]


def test_parse_short_generation():
    with pytest.raises(ShortGeneration) as exc:
        parse_generated_transcripts("1. The anemia worsened.\n2. Nothing here.", 2, "anemia", EN)
    assert exc.value.found == 1


def test_parse_ignores_blank_lines_quotes_and_duplicates():
    resp = '\n1) "Anemia is rare."\n\n2. anemia is rare\n3. - We studied anemia.\n\n\n'
    assert parse_generated_transcripts(resp, 2, "anemia", EN) == ["Anemia is rare.", "We studied anemia."]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="abc anemi.", max_size=25), max_size=8))
def test_parsed_items_contain_the_word(lines):
    resp = "\n".join(f"{k}. {s}" for k, s in enumerate(lines, 1))
    try:
        items = parse_generated_transcripts(resp, 1, "anemia", EN)
    except ShortGeneration as exc:
        items = exc.items
    assert all(contains_term(i, "anemia", EN) for i in items)


# -- GER messages ---------------------------------------------------------------------------------

def test_ger_messages_with_lsp():
    hyps = tuple(f"the son is rising {k}" for k in range(5))
    msgs = build_ger_messages(GerRequest(hyps, LSP))
    assert [m["role"] for m in msgs] == ["system", "user"]
    lines = msgs[1]["content"].splitlines()
    assert lines[0] == "Hypotheses:"
    assert lines[1:6] == [f"{k + 1}. {h}" for k, h in enumerate(hyps)]
    assert lines[6] == "Pronunciation: thuh sun iz rahy-zing"
    assert parse_ger_user_message(msgs[1]["content"]) == (list(hyps), "thuh sun iz rahy-zing")


def test_single_hypothesis_shape():
    msgs = build_ger_messages(GerRequest(("the son is rising",)))
    assert msgs[1]["content"] == "Hypotheses:\n1. the son is rising"


def test_phonetics_only_append():
    hyps = ("a b", "a c")
    base = build_ger_messages(GerRequest(hyps))
    with_p = build_ger_messages(GerRequest(hyps, LSP))
    assert with_p[0] == base[0]
    assert with_p[1]["content"].startswith(base[1]["content"] + "\n")
    assert build_ger_messages(GerRequest(hyps)) == base


def test_japanese_ger_messages():
    jp = PhoneticText(PhoneticScheme.LSP, Language.JA, "コンニチワ", "こんにちは")
    msgs = build_ger_messages(GerRequest(("こんにちわ",), jp, "JA"))
    assert msgs[1]["content"] == "仮説:\n1. こんにちわ\n発音: コンニチワ"


@pytest.mark.parametrize("raw", [
    '"the sun is rising"',
    "Corrected: the sun is rising",
    "```\nthe sun is rising\n```",
    "  the sun is rising\nsecond line",
    "Corrected transcript: 'the sun is rising'",
])
def test_parse_ger_response(raw):
    assert parse_ger_response(raw) == "the sun is rising"


def test_empty_ger_response():
    with pytest.raises(EmptyCorrection):
        parse_ger_response("")
    with pytest.raises(EmptyCorrection):
        parse_ger_response('  ""  ')

import json

import pytest

from rareger.cli import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, main
from rareger.corpus import EvalSet, EvalUtterance, HypothesisSet, RareWordList, save_eval_set, save_hypotheses
from rareger.corpus import save_rare_words

NOISY = {"seed": 1, "simulated": {"p_sub": 0.9, "use_lexicon": False,
                                  "confusions": {"anemia": [["enemy", 1]], "tachycardia": [["tacky", 1]]}}}
CLEAN = {"seed": 1, "simulated": {"p_sub": 0.0, "p_del": 0.0, "p_ins": 0.0, "use_lexicon": False, "confusions": {}}}


@pytest.fixture
def ws(tmp_path):
    """Writes inputs and returns a helper that runs the CLI inside tmp_path."""
    save_rare_words(RareWordList.from_surfaces(["anemia", "tachycardia"], "EN"), tmp_path / "words.txt")
    utts = (EvalUtterance("e1", "the patient has anemia"), EvalUtterance("e2", "no tachycardia today"))
    save_eval_set(EvalSet(utts, "tiny"), tmp_path / "eval.jsonl")

    def run(*argv, config=NOISY):
        (tmp_path / "config.json").write_text(json.dumps(config), encoding="utf-8")
        return main([*argv, "--config", str(tmp_path / "config.json"), "--run-dir", str(tmp_path / "run")])

    run.root = tmp_path
    return run


def test_no_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE


def test_extract_words_writes_list(ws):
    corpus = ws.root / "corpus.txt"
    corpus.write_text("The doctor diagnosed thrombocytopenia today.\n" + "we had a calm day\n" * 30,
                      encoding="utf-8")
    assert ws("extract-words", "--corpus", str(corpus)) == EXIT_OK
    assert "thrombocytopenia" in (ws.root / "run" / "rare_words.txt").read_text(encoding="utf-8").split()


def test_extract_words_infeasible_and_missing(ws):
    corpus = ws.root / "corpus.txt"
    corpus.write_text("Thrombocytopenia thrombocytopenia\n", encoding="utf-8")
    assert ws("extract-words", "--corpus", str(corpus)) == EXIT_DOMAIN
    assert ws("extract-words", "--corpus", str(ws.root / "nope.txt")) == EXIT_USAGE


def test_build_manifest(ws):
    assert ws("build", "--words", str(ws.root / "words.txt"), "--T", "3", "--S", "2", "--N", "3") == EXIT_OK
    out = ws.root / "run" / "dataset"
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["report"]["n_candidates"] == 12
    assert manifest["config"]["T"] == 3 and manifest["words"] == ["anemia", "tachycardia"]
    n_lines = sum(len((out / f).read_text().splitlines()) for f in ("train.jsonl", "val.jsonl"))
    assert n_lines == manifest["report"]["n_kept"] > 0


def test_build_zero_noise_exports_empty_dataset(ws):
    assert ws("build", "--words", str(ws.root / "words.txt"), "--T", "2", "--S", "2", config=CLEAN) == EXIT_OK
    out = ws.root / "run" / "dataset"
    assert (out / "train.jsonl").read_text() == "" and (out / "val.jsonl").read_text() == ""
    assert json.loads((out / "manifest.json").read_text())["report"]["n_dropped_no_error"] == 8


def test_build_bad_ratio(ws):
    assert ws("build", "--words", str(ws.root / "words.txt"), "--ratio", "4-1") == EXIT_USAGE


def test_correct_scheme_requires_phonetic_mode(ws):
    hyps = ws.root / "h.jsonl"
    save_hypotheses([HypothesisSet.from_texts("e1", ["x"]), HypothesisSet.from_texts("e2", ["y"])], hyps)
    base = ["correct", "--eval-set", str(ws.root / "eval.jsonl"), "--hypotheses", str(hyps)]
    assert ws(*base, "--scheme", "lsp") == EXIT_USAGE
    assert ws(*base, "--mode", "nbest-phonetic") == EXIT_USAGE


def test_asr_correct_score_pipeline(ws):
    run = ws.root / "run"
    assert ws("asr", "--eval-set", str(ws.root / "eval.jsonl"), "--N", "3") == EXIT_OK
    assert ws("correct", "--eval-set", str(ws.root / "eval.jsonl"), "--hypotheses",
              str(run / "hypotheses.jsonl")) == EXIT_OK
    outs = [json.loads(ln) for ln in (run / "outputs.jsonl").read_text().splitlines()]
    hyps = [json.loads(ln) for ln in (run / "hypotheses.jsonl").read_text().splitlines()]
    # without corrector data the simulated model echoes the 1-best
    assert [o["corrected"] for o in outs] == [h["hypotheses"][0]["text"] for h in hyps]
    assert ws("score", "--outputs", str(run / "outputs.jsonl"), "--eval-set", str(ws.root / "eval.jsonl"),
              "--words", str(ws.root / "words.txt")) == EXIT_OK
    assert (run / "report.md").read_text().startswith("<!-- cells:")
    assert (run / "report.csv").read_text().splitlines()[0].startswith("dataset_name,condition")
    lines = (run / "invocations.jsonl").read_text().splitlines()
    assert [json.loads(ln)["command"] for ln in lines] == ["asr", "correct", "score"]


def test_score_reports_missing_ids(ws, capsys):
    outs = ws.root / "h.jsonl"
    save_hypotheses([HypothesisSet.from_texts("e1", ["x"])], outs)
    code = ws("score", "--outputs", str(outs), "--eval-set", str(ws.root / "eval.jsonl"),
              "--words", str(ws.root / "words.txt"))
    assert code == EXIT_DOMAIN
    assert "e2" in capsys.readouterr().err


def test_sweep_usage_errors(ws):
    base = ["sweep", "--axis", "transcripts", "--words", str(ws.root / "words.txt"),
            "--eval-set", str(ws.root / "eval.jsonl")]
    assert ws(*base, "--values", "") == EXIT_USAGE
    assert ws(*base, "--values", "1,2", "--backend", "real") == EXIT_USAGE


def test_asr_reads_audio_files(ws):
    from rareger.services import TtsJob
    from rareger.simulate import SimulatedTtsBackend

    wav = ws.root / "e1.wav"
    wav.write_bytes(SimulatedTtsBackend().synthesize(TtsJob("no tachycardia today", 1)))
    save_eval_set(EvalSet((EvalUtterance("e1", "the patient has anemia", audio_ref=str(wav)),), "files"),
                  ws.root / "audio.jsonl")
    assert ws("asr", "--eval-set", str(ws.root / "audio.jsonl"), "--N", "2", config=CLEAN) == EXIT_OK
    rec = json.loads((ws.root / "run" / "hypotheses.jsonl").read_text())
    # recognised from the file, not from the reference text
    assert rec["hypotheses"][0]["text"] == "no tachycardia today"

"""``rareger`` command line.

Exit codes: 0 success, 1 usage or input error, 2 domain failure,
3 service failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import re
import sys
import warnings
from pathlib import Path

from rareger import corpus as corpus_mod
from rareger.corpus import EvalSet, load_eval_set, load_hypotheses, load_rare_words, save_hypotheses, save_rare_words
from rareger.databuild import (
    BuildCheckpoint,
    BuildConfig,
    DegenerateSplit,
    export_finetune,
    generate_pairs,
    split,
    write_manifest,
)
from rareger.errors import (
    AlignmentError,
    CoverageInfeasible,
    DecodeError,
    EmptyList,
    MissingHypotheses,
    ParseError,
    RareGerError,
    ServiceError,
    TemplateError,
)
from rareger.ger import GerCondition, LookupCorrector, load_outputs, run_eval
from rareger.phonetics import G2pLexicon, PhoneticContext, PhoneticScheme
from rareger.prompts import PromptCatalog
from rareger.report import SweepAxis, SweepPipeline, emit, run_sweep, summarize
from rareger.services import (
    AsrClient,
    AuditLog,
    ChatClient,
    Clients,
    HttpAsrBackend,
    HttpTtsBackend,
    OpenAICompatibleBackend,
    RetryPolicy,
    TtsClient,
    build_confusion_model,
)
from rareger.simulate import SimulatedAsrBackend, SimulatedChatBackend, SimulatedTtsBackend
from rareger.store import BlobStore, JsonlCache, canonical_json, sha256_hex
from rareger.text import Language, NormPolicy

log = logging.getLogger("rareger")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_SERVICE = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "backend": "simulated",
    "seed": 0,
    "language": "EN",
    "build": {"T": 4, "S": 7, "N": 5, "split_ratio": [4, 1], "phonetic_scheme": None,
              "gen_temperature": 0.7, "max_retries": 2, "workers": 4},
    "services": {
        "max_concurrency": 4, "max_retries": 2, "backoff_base": 0.5, "timeout": 60.0,
        "chat": {"base_url": "https://api.openai.com/v1", "model": "gpt-4o-mini", "api_key_env": "OPENAI_API_KEY"},
        "tts": {"base_url": None, "api_key_env": "TTS_API_KEY", "voices": []},
        "asr": {"base_url": None, "api_key_env": "ASR_API_KEY"},
    },
    "simulated": {"p_sub": 0.3, "p_del": 0.0, "p_ins": 0.0, "confusion_threshold": 1,
                  "use_lexicon": True, "confusions": {}},
    "paths": {"ipa_lexicon": None, "arpabet_lexicon": None, "ja_reading_lexicon": None, "prompt_catalog": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args) -> dict:
    cfg = DEFAULT_CONFIG
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg = _merge(cfg, json.loads(path.read_text(encoding="utf-8")))
    cfg = copy.deepcopy(cfg)
    if args.backend:
        cfg["backend"] = args.backend
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.language:
        cfg["language"] = args.language
    if cfg["backend"] not in ("simulated", "real"):
        raise UsageError(f"backend must be 'simulated' or 'real', not {cfg['backend']!r}")
    Language.parse(cfg["language"])
    return cfg


class Run:
    """Resolved configuration, run directory and lazily built service clients."""

    def __init__(self, args, cfg: dict, clients: Clients | None = None):
        self.args = args
        self.cfg = cfg
        self.language = Language.parse(cfg["language"])
        self.dir = Path(args.run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = sha256_hex(canonical_json(cfg))[:16]
        self._clients = clients
        self._caches: dict[str, JsonlCache] = {}
        paths = cfg["paths"]
        self.catalog = PromptCatalog.load(paths["prompt_catalog"]) if paths.get("prompt_catalog") else PromptCatalog.default()
        manifest = {"config": cfg, "config_hash": self.config_hash}
        write_manifest(self.dir / "manifest.json", manifest)

    def cache(self, name: str) -> JsonlCache:
        if name not in self._caches:
            self._caches[name] = JsonlCache(self.dir / "cache" / f"{name}.jsonl")
        return self._caches[name]

    def lexicon(self, key: str, bundled: str):
        path = self.cfg["paths"].get(key)
        return G2pLexicon.load(path) if path else G2pLexicon.bundled(bundled)

    def confusion_model(self):
        sim = self.cfg["simulated"]
        model = None
        if sim.get("use_lexicon", True):
            lex = self.lexicon("ja_reading_lexicon", "ja_reading") if self.language is Language.JA \
                else self.lexicon("arpabet_lexicon", "en_arpabet")
            model = build_confusion_model(lex, int(sim.get("confusion_threshold", 1)), sim["p_sub"],
                                          sim["p_del"], sim["p_ins"], int(self.cfg["seed"]))
        if model is None:
            from rareger.services import ConfusionModel
            model = ConfusionModel({}, sim["p_sub"], sim["p_del"], sim["p_ins"], int(self.cfg["seed"]))
        return model.merged(sim.get("confusions", {}))

    def chat_client(self, backend=None, model_id=None) -> ChatClient:
        svc = self.cfg["services"]
        if backend is None:
            if self.cfg["backend"] == "simulated":
                backend, model_id = SimulatedChatBackend(self.catalog), model_id or "simulated"
            else:
                chat = svc["chat"]
                backend = OpenAICompatibleBackend(chat["base_url"], os.environ.get(chat.get("api_key_env") or ""),
                                                  timeout=svc["timeout"])
                model_id = model_id or chat["model"]
        return ChatClient(backend, model_id=model_id or "", cache=self.cache("chat"), retry=self._retry(),
                          max_concurrency=svc["max_concurrency"], audit=self._audit())

    def _retry(self) -> RetryPolicy:
        svc = self.cfg["services"]
        base = 0.0 if self.cfg["backend"] == "simulated" else svc["backoff_base"]
        return RetryPolicy(max_retries=svc["max_retries"], backoff_base=base)

    def _audit(self):
        return AuditLog(self.dir / "audit.jsonl") if self.cfg["backend"] == "real" else None

    def phonetics(self, chat: ChatClient) -> PhoneticContext:
        ipa = self.lexicon("ipa_lexicon", "en_ipa") if self.language is Language.EN else None
        tts = self.lexicon("arpabet_lexicon", "en_arpabet") if self.language is Language.EN \
            else self.lexicon("ja_reading_lexicon", "ja_reading")
        return PhoneticContext(self.language, ipa, tts, chat, self.cache("phonetic"), self.catalog)

    def clients(self, n_speakers: int = 7, chat: ChatClient | None = None) -> Clients:
        if self._clients is not None:
            return self._clients
        svc = self.cfg["services"]
        chat = chat or self.chat_client()
        store = BlobStore(self.dir / "store")
        common = dict(retry=self._retry(), max_concurrency=svc["max_concurrency"], audit=self._audit())
        if self.cfg["backend"] == "simulated":
            tts_backend, asr_backend = SimulatedTtsBackend(), SimulatedAsrBackend(self.confusion_model())
        else:
            if not svc["tts"].get("base_url") or not svc["asr"].get("base_url"):
                tts_backend = asr_backend = None
            else:
                tts_backend = HttpTtsBackend(svc["tts"]["base_url"], os.environ.get(svc["tts"].get("api_key_env") or ""))
                asr_backend = HttpAsrBackend(svc["asr"]["base_url"], os.environ.get(svc["asr"].get("api_key_env") or ""))
        tts = asr = None
        if tts_backend is not None:
            tts = TtsClient(tts_backend, store, n_speakers, svc["tts"].get("voices", []), cache=self.cache("tts"), **common)
            asr = AsrClient(asr_backend, store, self.language, cache=self.cache("asr"), **common)
        self._clients = Clients(chat, tts, asr, self.phonetics(chat), self.catalog)
        return self._clients

    def build_config(self, **overrides) -> BuildConfig:
        b = dict(self.cfg["build"])
        b.update({k: v for k, v in overrides.items() if v is not None})
        return BuildConfig(T=b["T"], S=b["S"], N=b["N"], split_ratio=tuple(b["split_ratio"]),
                           seed=int(self.cfg["seed"]), phonetic_scheme=b.get("phonetic_scheme"),
                           language=self.language, max_retries=b["max_retries"],
                           gen_temperature=b["gen_temperature"], workers=b["workers"])

    def log_invocation(self, command: str) -> None:
        calls = self._clients.total_calls() if self._clients is not None else 0
        rec = {"command": command, "config_hash": self.config_hash, "service_calls": calls}
        with open(self.dir / "invocations.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {p}")
    return p


def _scheme_arg(value):
    return None if value is None else PhoneticScheme.parse(value)


def _eval_hypotheses(clients: Clients, eval_set: EvalSet, n: int) -> dict:
    """N-best per utterance; references without audio are voiced by speaker 1."""
    out = {}
    for utt in eval_set:
        source = utt.audio_ref
        if source and not re.fullmatch(r"[0-9a-f]{64}", source) and Path(source).is_file():
            source = clients.asr.store.put(Path(source).read_bytes())
        source = source or clients.tts.synthesize(clients.tts.job(utt.reference, 1, utt.language))
        res = clients.asr.transcribe(source, n, utt.id)
        out[utt.id] = corpus_mod.HypothesisSet(utt.id, res.nbest)
    return out


def _lookup_chat(run: Run, corrector: LookupCorrector, fingerprint: str) -> ChatClient:
    backend = SimulatedChatBackend(run.catalog, corrector=corrector)
    return run.chat_client(backend, model_id=f"lookup-{fingerprint[:16]}")


# -- commands -------------------------------------------------------------------------------

def cmd_extract_words(run: Run, args) -> int:
    corpus_path = _need_file(args.corpus)
    text = corpus_path.read_text(encoding="utf-8")
    words = corpus_mod.extract_rare_words(text, run.language, run.clients().chat, args.target_coverage,
                                          catalog=run.catalog)
    out = Path(args.out or run.dir / "rare_words.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_rare_words(words, out)
    print(f"wrote {len(words)} rare words to {out}")
    return EXIT_OK


def cmd_build(run: Run, args) -> int:
    words = load_rare_words(_need_file(args.words), run.language)
    ratio = None
    if args.ratio:
        a, _, b = args.ratio.partition(":")
        ratio = [int(a), int(b)]
    cfg = run.build_config(T=args.T, S=args.S, N=args.N, split_ratio=ratio,
                           phonetic_scheme=args.scheme and _scheme_arg(args.scheme).value)
    clients = run.clients(n_speakers=cfg.S)
    if clients.tts is None:
        raise UsageError("build needs TTS and ASR endpoints (services.tts/asr.base_url) or --backend simulated")
    out_dir = Path(args.out_dir or run.dir / "dataset")
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = BuildCheckpoint(out_dir / "build.ckpt.jsonl")
    examples, report = generate_pairs(words, cfg, clients, ckpt, run.catalog)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSplit)
        train, val = split(examples, cfg.split_ratio, cfg.seed)
    for w in caught:
        log.warning("%s", w.message)
    files = {}
    for name, part in (("train", train), ("val", val)):
        path = out_dir / f"{name}.jsonl"
        if part:
            files[name] = export_finetune(part, run.catalog, path, cfg.language)
        else:
            path.write_text("", encoding="utf-8")
            files[name] = {"path": str(path), "n_records": 0, "sha256": sha256_hex(""),
                           "prompt_catalog_version": run.catalog.version}
    if not examples:
        log.warning("no error pairs survived filtering; dataset is empty")
    write_manifest(out_dir / "manifest.json", {"config": cfg.to_dict(), "config_hash": run.config_hash,
                                               "report": report.to_dict(), "files": files,
                                               "words": words.surfaces})
    print(f"candidates={report.n_candidates} kept={report.n_kept} dropped={report.n_dropped_no_error} "
          f"train={len(train)} val={len(val)} -> {out_dir}")
    return EXIT_OK


def cmd_asr(run: Run, args) -> int:
    eval_set = load_eval_set(_need_file(args.eval_set))
    clients = run.clients()
    if clients.asr is None:
        raise UsageError("asr needs TTS and ASR endpoints or --backend simulated")
    out = list(_eval_hypotheses(clients, eval_set, args.N or run.cfg["build"]["N"]).values())
    path = Path(args.out or run.dir / "hypotheses.jsonl")
    save_hypotheses(out, path)
    print(f"wrote {len(out)} hypothesis sets to {path}")
    return EXIT_OK


def _condition(args, model_id: str) -> GerCondition:
    mode = args.mode.upper().replace("-", "_")
    if args.scheme and mode != "NBEST_PHONETIC":
        raise UsageError("--scheme requires --mode nbest-phonetic")
    if mode == "NBEST_PHONETIC" and not args.scheme:
        raise UsageError("--mode nbest-phonetic requires --scheme")
    return GerCondition(mode, _scheme_arg(args.scheme), model_id)


def cmd_correct(run: Run, args) -> int:
    _condition(args, "")
    eval_set = load_eval_set(_need_file(args.eval_set))
    hyps = load_hypotheses(_need_file(args.hypotheses))
    chat = None
    if args.corrector_data:
        if run.cfg["backend"] != "simulated":
            raise UsageError("--corrector-data is only available with --backend simulated")
        data = _need_file(args.corrector_data)
        corrector = LookupCorrector.from_finetune_jsonl(data, run.language)
        chat = _lookup_chat(run, corrector, sha256_hex(data.read_bytes()))
    clients = run.clients(chat=chat) if run._clients is None else run._clients
    condition = _condition(args, args.model or clients.chat.model_id)
    out = Path(args.out or run.dir / "outputs.jsonl")
    outputs = run_eval(eval_set, hyps, condition, clients, checkpoint=out, workers=args.workers)
    fallbacks = sum(o.fallback for o in outputs)
    print(f"corrected {len(outputs)} utterances ({fallbacks} fallbacks) -> {out}")
    return EXIT_OK


def _load_system_outputs(path):
    recs = corpus_mod.read_jsonl(path)
    if recs and "corrected" in recs[0]:
        return load_outputs(path)
    return load_hypotheses(path)


def cmd_score(run: Run, args) -> int:
    eval_set = load_eval_set(_need_file(args.eval_set))
    words = load_rare_words(_need_file(args.words), run.language)
    outputs = _load_system_outputs(_need_file(args.outputs))
    rep = summarize(outputs, eval_set, words, NormPolicy.for_language(run.language),
                    dataset_name=args.dataset_name, condition=args.condition)
    prefix = Path(args.out_prefix or run.dir / "report")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for fmt, ext in (("markdown", ".md"), ("csv", ".csv"), ("json", ".json")):
        emit(rep, fmt, prefix.with_name(prefix.name + ext))
    print(f"{rep.dataset_name} [{rep.condition or '-'}] {rep.metric}/recall/precision: {rep.cell()}")
    return EXIT_OK


def cmd_sweep(run: Run, args) -> int:
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    if run.cfg["backend"] != "simulated":
        raise UsageError("sweep trains a lookup corrector per point and needs --backend simulated")
    axis = SweepAxis.parse(args.axis)
    words = load_rare_words(_need_file(args.words), run.language)
    eval_set: EvalSet = load_eval_set(_need_file(args.eval_set))
    fixed = args.fixed or (run.cfg["build"]["S"] if axis is SweepAxis.TRANSCRIPTS else run.cfg["build"]["T"])
    max_s = max(values) if axis is SweepAxis.SPEAKERS else fixed
    clients = run.clients(n_speakers=max(max_s, 1))
    cfg = run.build_config()
    if args.hypotheses:
        hyps = load_hypotheses(_need_file(args.hypotheses))
    else:
        hyps = _eval_hypotheses(clients, eval_set, cfg.N)

    def make_corrector(examples):
        corrector = LookupCorrector.from_examples(examples, run.language)
        fp = sha256_hex(canonical_json(sorted([list(k), list(v)] for k, v in corrector.rules.items())))
        chat = _lookup_chat(run, corrector, fp)
        return Clients(chat, clients.tts, clients.asr, clients.phonetics, run.catalog)

    pipeline = SweepPipeline(clients, eval_set, hyps, words, make_corrector, cfg,
                             policy=NormPolicy.for_language(run.language), workdir=run.dir / "sweep")
    grid = run_sweep(words, axis, values, fixed, pipeline)
    out = Path(args.out or run.dir / f"sweep_{axis.value.lower()}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    emit(grid, "csv", out)
    for p in grid.points:
        print(f"{axis.value.lower()}={p.value} f1={100 * p.f1:.1f}")
    return EXIT_OK


COMMANDS = {
    "extract-words": cmd_extract_words,
    "build": cmd_build,
    "asr": cmd_asr,
    "correct": cmd_correct,
    "score": cmd_score,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--backend", choices=("simulated", "real"))
    common.add_argument("--seed", type=int)
    common.add_argument("--language", choices=("EN", "JA", "en", "ja"))
    common.add_argument("--run-dir", default="runs/default", help="caches, checkpoints and outputs go here")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="rareger", description="Rare-word generative error correction toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract-words", parents=[common], help="build a rare-word list with an LLM")
    s.add_argument("--corpus", required=True)
    s.add_argument("--target-coverage", type=float, default=10.0)
    s.add_argument("--out")

    s = sub.add_parser("build", parents=[common], help="generate synthetic error pairs and export fine-tune data")
    s.add_argument("--words", required=True)
    s.add_argument("--T", type=int, dest="T")
    s.add_argument("--S", type=int, dest="S")
    s.add_argument("--N", type=int, dest="N")
    s.add_argument("--ratio", help="train:val, e.g. 4:1")
    s.add_argument("--scheme", choices=("ipa", "tts-phoneme", "lsp"))
    s.add_argument("--out-dir")

    s = sub.add_parser("asr", parents=[common], help="produce N-best hypotheses for an evaluation set")
    s.add_argument("--eval-set", required=True)
    s.add_argument("--N", type=int, dest="N")
    s.add_argument("--out")

    s = sub.add_parser("correct", parents=[common], help="run GER over an evaluation set")
    s.add_argument("--eval-set", required=True)
    s.add_argument("--hypotheses", required=True)
    s.add_argument("--mode", choices=("prompt-only", "nbest", "nbest-phonetic"), default="nbest")
    s.add_argument("--scheme", choices=("ipa", "tts-phoneme", "lsp"))
    s.add_argument("--model", help="model id (defaults to the configured chat model)")
    s.add_argument("--corrector-data", help="simulated backend: fine-tune JSONL for the lookup corrector")
    s.add_argument("--workers", type=int, default=4)
    s.add_argument("--out")

    s = sub.add_parser("score", parents=[common], help="score outputs into report tables")
    s.add_argument("--outputs", required=True, help="GER outputs or hypotheses JSONL")
    s.add_argument("--eval-set", required=True)
    s.add_argument("--words", required=True)
    s.add_argument("--dataset-name")
    s.add_argument("--condition")
    s.add_argument("--out-prefix")

    s = sub.add_parser("sweep", parents=[common], help="F1 over numbers of transcripts or speakers")
    s.add_argument("--axis", required=True, choices=("transcripts", "speakers"))
    s.add_argument("--values", required=True, help="comma-separated, increasing")
    s.add_argument("--fixed", type=int, help="value of the other axis")
    s.add_argument("--words", required=True)
    s.add_argument("--eval-set", required=True)
    s.add_argument("--hypotheses")
    s.add_argument("--out")
    return p


def main(argv=None, clients: Clients | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args)
        run = Run(args, cfg, clients)
        code = COMMANDS[args.command](run, args)
        run.log_invocation(args.command)
        return code
    except UsageError as exc:
        print(f"rareger: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AlignmentError, MissingHypotheses, CoverageInfeasible, EmptyList) as exc:
        print(f"rareger: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ServiceError as exc:
        print(f"rareger: service failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (DecodeError, ParseError, TemplateError, FileNotFoundError, ValueError) as exc:
        print(f"rareger: input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RareGerError as exc:
        print(f"rareger: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

"""Result tables ("WER / recall / precision" cells) and T/S sweep grids."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from rareger.corpus import EvalSet, HypothesisSet
from rareger.databuild import BuildCheckpoint, BuildConfig, generate_pairs
from rareger.errors import AlignmentError, ExportError
from rareger.ger import GerCondition, GerMode, GerOutput, run_eval
from rareger.metrics import error_counts, rare_word_scores
from rareger.services import Clients
from rareger.store import atomic_write
from rareger.text import NormPolicy, Unit

_REPORT_FIELDS = ("dataset_name", "condition", "metric", "error_rate", "recall", "precision", "f1", "n_utts")


@dataclass(frozen=True)
class EvalReport:
    dataset_name: str
    condition: str
    error_rate: float
    recall: Optional[float]
    precision: Optional[float]
    f1: Optional[float]
    n_utts: int
    metric: str = "WER"

    def __post_init__(self):
        if self.error_rate < 0:
            raise ValueError("error_rate must be non-negative")

    def cell(self) -> str:
        """``error / recall / precision`` in percent with one decimal."""
        return " / ".join(_pct(v) for v in (self.error_rate, self.recall, self.precision))


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def _texts_by_id(outputs) -> dict[str, str]:
    if isinstance(outputs, Mapping):
        return {k: (v.best if isinstance(v, HypothesisSet) else v) for k, v in outputs.items()}
    texts = {}
    for o in outputs:
        if isinstance(o, GerOutput):
            texts[o.utterance_id] = o.corrected
        elif isinstance(o, HypothesisSet):
            texts[o.utterance_id] = o.best
        else:
            uid, text = o
            texts[uid] = text
    return texts


def summarize(outputs, eval_set: EvalSet, rare_list, policy: NormPolicy | None = None,
              dataset_name: str | None = None, condition: str | None = None) -> EvalReport:
    """Pooled error rate (sum of distances over sum of reference lengths) and
    rare-word scores for one system output."""
    policy = policy or NormPolicy.for_language(eval_set.language)
    texts = _texts_by_id(outputs)
    ids = set(eval_set.ids)
    if set(texts) != ids:
        raise AlignmentError(missing=ids - set(texts), extra=set(texts) - ids)
    if condition is None:
        conds = {o.condition.label for o in outputs if isinstance(o, GerOutput)} if not isinstance(outputs, Mapping) else set()
        condition = conds.pop() if len(conds) == 1 else ""
    dist = total = 0
    pairs = []
    for utt in eval_set:
        d, n = error_counts(utt.reference, texts[utt.id], policy)
        dist += d
        total += n
        pairs.append((utt.reference, texts[utt.id]))
    score = rare_word_scores(pairs, rare_list, policy)
    return EvalReport(
        dataset_name=dataset_name if dataset_name is not None else eval_set.name,
        condition=condition,
        error_rate=dist / max(1, total),
        recall=score.recall,
        precision=score.precision,
        f1=score.f1,
        n_utts=len(eval_set),
        metric="CER" if policy.unit is Unit.CHAR else "WER",
    )


# -- sweeps ---------------------------------------------------------------------------

class SweepAxis(str, enum.Enum):
    TRANSCRIPTS = "TRANSCRIPTS"
    SPEAKERS = "SPEAKERS"

    @classmethod
    def parse(cls, value) -> "SweepAxis":
        return value if isinstance(value, cls) else cls(str(value).strip().upper())


@dataclass(frozen=True)
class SweepPoint:
    value: int
    f1: float


@dataclass(frozen=True)
class SweepGrid:
    axis: SweepAxis
    points: tuple[SweepPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis.parse(self.axis))
        vals = [p.value for p in self.points]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")


@dataclass
class SweepPipeline:
    """What one sweep point runs: build pairs, train a corrector, score it.

    ``make_corrector`` receives the built examples and returns the clients used
    for correction (typically a simulated chat backend wrapping a
    :class:`~rareger.ger.LookupCorrector`).
    """

    build_clients: Clients
    eval_set: EvalSet
    hypotheses: Mapping[str, HypothesisSet]
    rare_list: object
    make_corrector: Callable[[list], Clients]
    base_cfg: BuildConfig = field(default_factory=BuildConfig)
    condition: GerCondition = field(default_factory=lambda: GerCondition(GerMode.NBEST))
    policy: Optional[NormPolicy] = None
    workdir: Optional[Path] = None


def run_sweep(words, axis, values: Sequence[int], fixed_other: int, pipeline: SweepPipeline) -> SweepGrid:
    axis = SweepAxis.parse(axis)
    values = [int(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly increasing")
    points = []
    for v in values:
        if axis is SweepAxis.TRANSCRIPTS:
            cfg = pipeline.base_cfg.replace(T=v, S=fixed_other)
        else:
            cfg = pipeline.base_cfg.replace(T=fixed_other, S=v)
        ckpt = None
        if pipeline.workdir is not None:
            ckpt = BuildCheckpoint(Path(pipeline.workdir) / f"{axis.value.lower()}-{v}" / "build.ckpt.jsonl")
        examples, _ = generate_pairs(words, cfg, pipeline.build_clients, ckpt)
        clients = pipeline.make_corrector(examples)
        outputs = run_eval(pipeline.eval_set, pipeline.hypotheses, pipeline.condition, clients)
        rep = summarize(outputs, pipeline.eval_set, pipeline.rare_list, pipeline.policy)
        points.append(SweepPoint(v, rep.f1 if rep.f1 is not None else 0.0))
    return SweepGrid(axis, tuple(points))


# -- serialisation ------------------------------------------------------------------------

def _fmt_float(v) -> str:
    return "" if v is None else repr(float(v))


def render_report(reports, fmt: str) -> str:
    reports = [reports] if isinstance(reports, EvalReport) else list(reports)
    fmt = _norm_fmt(fmt)
    if fmt == "json":
        return json.dumps([asdict(r) for r in reports], ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_REPORT_FIELDS)
        for r in reports:
            w.writerow([r.dataset_name, r.condition, r.metric, _fmt_float(r.error_rate), _fmt_float(r.recall),
                        _fmt_float(r.precision), _fmt_float(r.f1), r.n_utts])
        return buf.getvalue()
    datasets, conditions = [], []
    for r in reports:
        if r.dataset_name not in datasets:
            datasets.append(r.dataset_name)
        if r.condition not in conditions:
            conditions.append(r.condition)
    cells = {(r.condition, r.dataset_name): r.cell() for r in reports}
    metrics = "/".join(sorted({r.metric for r in reports}))
    lines = [
        f"<!-- cells: {metrics} / recall / precision (%) -->",
        "| method | " + " | ".join(datasets) + " |",
        "|---|" + "---|" * len(datasets),
    ]
    for c in conditions:
        lines.append(f"| {c or '-'} | " + " | ".join(cells.get((c, d), "-") for d in datasets) + " |")
    return "\n".join(lines) + "\n"


def render_grid(grid: SweepGrid, fmt: str) -> str:
    fmt = _norm_fmt(fmt)
    if fmt == "json":
        return json.dumps({"axis": grid.axis.value, "points": [asdict(p) for p in grid.points]},
                          sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return "value,f1\n" + "".join(f"{p.value},{_fmt_float(p.f1)}\n" for p in grid.points)
    lines = [f"| {grid.axis.value.lower()} | F1 (%) |", "|---|---|"]
    lines += [f"| {p.value} | {_pct(p.f1)} |" for p in grid.points]
    return "\n".join(lines) + "\n"


def _norm_fmt(fmt: str) -> str:
    f = fmt.lower()
    if f in ("md", "markdown", "markdown-table"):
        return "markdown"
    if f in ("csv", "json"):
        return f
    raise ValueError(f"unknown format {fmt!r}; use markdown, csv or json")


def emit(obj, fmt: str, path=None) -> str:
    """Serialise a report, a list of reports or a grid; write to ``path`` if given."""
    text = render_grid(obj, fmt) if isinstance(obj, SweepGrid) else render_report(obj, fmt)
    if path is not None:
        try:
            atomic_write(path, text)
        except OSError as exc:
            raise ExportError(f"cannot write {path}: {exc}") from exc
    return text


def _opt(v: str) -> Optional[float]:
    return None if v == "" else float(v)


def load_reports(path) -> list[EvalReport]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return [EvalReport(**d) for d in json.loads(text)]
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(EvalReport(row["dataset_name"], row["condition"], float(row["error_rate"]), _opt(row["recall"]),
                              _opt(row["precision"]), _opt(row["f1"]), int(row["n_utts"]), row["metric"]))
    return out


def load_grid(path, axis=SweepAxis.TRANSCRIPTS) -> SweepGrid:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        d = json.loads(text)
        return SweepGrid(d["axis"], tuple(SweepPoint(p["value"], p["f1"]) for p in d["points"]))
    rows = list(csv.DictReader(io.StringIO(text)))
    return SweepGrid(axis, tuple(SweepPoint(int(r["value"]), float(r["f1"])) for r in rows))

"""Scoring and stratified reporting.

:func:`evaluate` runs paradigms over a benchmark, :func:`match_answer`
decides correctness, :func:`stratify` buckets accuracy along the three
complexity dimensions and per indicator, and :func:`emit_report` writes
json/csv/markdown files whose bytes depend only on the report.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .benchgen import BenchmarkInstance, BenchmarkQuery
from .errors import BackendError, EmptyInput, TranscriptMiss
from .indicators import INDICATORS, CCBTags, Difficulty, IndicatorId, IndicatorValue, Source, Unit, classify
from .numtext import DECIMAL_CONTEXT, parse_plain_decimal, plain_text
from .potloop.loop import Answer, LoopConfig, NoAnswer, Paradigm, _NoAnswer, parse_answer_text, run_query

logger = logging.getLogger(__name__)

_CTX = DECIMAL_CONTEXT
_HUNDRED = Decimal(100)


# --- matching -------------------------------------------------------------


def _default_tolerances() -> dict[Unit, Decimal]:
    return {
        Unit.PERCENTAGE: Decimal("1e-3"),
        Unit.RATIO: Decimal("1e-3"),
        Unit.DAYS: Decimal("1e-3"),
        Unit.CURRENCY: Decimal("1e-6"),
    }


@dataclass(frozen=True)
class MatchPolicy:
    """Relative tolerances per unit kind plus percent handling.

    A bare number answering a percentage question is read as a percent when
    its magnitude exceeds ``percent_threshold``.
    """

    tolerances: dict[Unit, Decimal] = field(default_factory=_default_tolerances)
    percent_threshold: Decimal = Decimal("1.5")
    floor: Decimal = Decimal("1e-12")

    def __post_init__(self):
        tol = {Unit(k): Decimal(v) for k, v in dict(self.tolerances).items()}
        missing = set(Unit) - set(tol)
        if missing:
            raise ValueError(f"no tolerance for {sorted(u.value for u in missing)}")
        for unit, t in tol.items():
            if not 0 < t < 1:
                raise ValueError(f"tolerance for {unit.value} must lie in (0, 1), got {t}")
        object.__setattr__(self, "tolerances", tol)

    def to_json_obj(self) -> dict:
        return {
            "tolerances": {u.value: str(self.tolerances[u]) for u in Unit},
            "percent_threshold": str(self.percent_threshold),
            "floor": str(self.floor),
        }


def normalize_prediction(predicted: Answer, unit: Unit, policy: MatchPolicy) -> Decimal:
    """Map an answer onto the oracle's representation (percentages as fractions)."""
    value = predicted.value
    text = predicted.unit_text.strip()
    if text == "native":
        return value
    if "%" in text:
        return _CTX.divide(value, _HUNDRED)
    if unit is Unit.PERCENTAGE and value.copy_abs() > policy.percent_threshold:
        return _CTX.divide(value, _HUNDRED)
    return value


def match_answer(predicted, truth: IndicatorValue, policy: MatchPolicy = MatchPolicy()) -> bool:
    """``predicted`` may be an :class:`Answer`, ``NoAnswer``, a Decimal or answer text like ``"10%"``."""
    if isinstance(predicted, _NoAnswer) or predicted is None:
        return False
    if isinstance(predicted, str):
        predicted = parse_answer_text(predicted)
        if predicted is None:
            return False
    elif isinstance(predicted, (Decimal, int)):
        predicted = Answer(Decimal(predicted), "")
    if not predicted.value.is_finite():
        return False
    value = normalize_prediction(predicted, truth.unit, policy)
    bound = _CTX.multiply(policy.tolerances[truth.unit], max(truth.value.copy_abs(), policy.floor))
    return _CTX.subtract(value, truth.value).copy_abs() <= bound


# --- evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class EvaluationRecord:
    query_id: str
    paradigm: Paradigm
    model: str
    indicator: IndicatorId
    predicted: Answer | _NoAnswer
    truth: IndicatorValue
    correct: bool
    trace: dict | None = None
    failure: str | None = None

    def __post_init__(self):
        if self.correct and isinstance(self.predicted, _NoAnswer):
            raise ValueError("NoAnswer cannot be correct")

    @property
    def tags(self) -> CCBTags:
        return classify(self.indicator)

    def to_json_obj(self) -> dict:
        pred = None
        if isinstance(self.predicted, Answer):
            pred = {"value": plain_text(self.predicted.value), "unit_text": self.predicted.unit_text}
        return {
            "query_id": self.query_id,
            "paradigm": self.paradigm.value,
            "model": self.model,
            "indicator": self.indicator.value,
            "predicted": pred,
            "truth": plain_text(self.truth.value),
            "unit": self.truth.unit.value,
            "fiscal_year": self.truth.year,
            "correct": self.correct,
            "trace": self.trace,
            "failure": self.failure,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> EvaluationRecord:
        pred = obj.get("predicted")
        predicted = NoAnswer if pred is None else Answer(parse_plain_decimal(pred["value"]), pred["unit_text"])
        return cls(
            obj["query_id"],
            Paradigm(obj["paradigm"]),
            obj["model"],
            IndicatorId(obj["indicator"]),
            predicted,
            IndicatorValue(parse_plain_decimal(obj["truth"]), Unit(obj["unit"]), int(obj.get("fiscal_year", 0))),
            bool(obj["correct"]),
            obj.get("trace"),
            obj.get("failure"),
        )


@dataclass
class EvaluationRun:
    records: list[EvaluationRecord]
    metadata: dict

    def to_json_obj(self) -> dict:
        return {"metadata": self.metadata, "records": [r.to_json_obj() for r in self.records]}

    def to_bytes(self) -> bytes:
        return (json.dumps(self.to_json_obj(), ensure_ascii=False, indent=1, sort_keys=True) + "\n").encode("utf-8")

    @classmethod
    def from_json_obj(cls, obj: dict) -> EvaluationRun:
        return cls([EvaluationRecord.from_json_obj(r) for r in obj["records"]], obj.get("metadata", {}))

    @classmethod
    def load(cls, path) -> EvaluationRun:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))


def _config_json(cfg: LoopConfig) -> dict:
    return {
        "max_depth": cfg.max_depth,
        "temperature": cfg.decoding.temperature,
        "max_tokens": cfg.decoding.max_tokens,
        "phase1_reask": cfg.phase1_reask,
    }


def evaluate(
    instance: BenchmarkInstance,
    backends,
    paradigms,
    cfg: LoopConfig = LoopConfig(),
    policy: MatchPolicy = MatchPolicy(),
    *,
    jobs: int = 1,
) -> EvaluationRun:
    """One record per (backend, paradigm, query), in that nesting order.

    A :class:`TranscriptMiss` turns one record into ``NoAnswer``; any other
    :class:`BackendError` stops the affected backend, whose remaining records
    become ``NoAnswer``.  Both are flagged in the metadata.
    """
    paradigms = [Paradigm(p) for p in paradigms]
    records: list[EvaluationRecord] = []
    misses: list[dict] = []
    aborted: dict[str, str] = {}

    for backend in backends:
        stop = threading.Event()
        abort_reason: list[str] = []
        lock = threading.Lock()

        def one(item: tuple[Paradigm, BenchmarkQuery]) -> EvaluationRecord:
            paradigm, q = item
            base = dict(query_id=q.query_id, paradigm=paradigm, model=backend.identity, indicator=q.indicator, truth=q.truth)
            if stop.is_set():
                return EvaluationRecord(predicted=NoAnswer, correct=False, failure="backend aborted", **base)
            try:
                result = run_query(backend, instance.context(q), paradigm, cfg)
            except TranscriptMiss as exc:
                with lock:
                    misses.append({"model": backend.identity, "query_id": q.query_id, "paradigm": paradigm.value, "prompt_key": exc.prompt_key})
                return EvaluationRecord(predicted=NoAnswer, correct=False, failure="transcript miss", **base)
            except BackendError as exc:
                with lock:
                    if not stop.is_set():
                        abort_reason.append(str(exc))
                    stop.set()
                return EvaluationRecord(predicted=NoAnswer, correct=False, failure=f"backend error: {exc}", **base)
            answer = result.answers[q.indicator]
            return EvaluationRecord(
                predicted=answer,
                correct=match_answer(answer, q.truth, policy),
                trace=result.trace.summary() if result.trace is not None else None,
                failure=result.failure,
                **base,
            )

        work = [(p, q) for p in paradigms for q in instance.queries]
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                records.extend(pool.map(one, work))
        else:
            records.extend(one(w) for w in work)
        if abort_reason:
            aborted[backend.identity] = abort_reason[0]
            logger.error("backend %s aborted: %s", backend.identity, abort_reason[0])

    misses.sort(key=lambda m: (m["model"], m["paradigm"], m["query_id"]))
    metadata = {
        "instance_hash": instance.content_hash(),
        "instance_manifest": instance.manifest,
        "policy": policy.to_json_obj(),
        "config": _config_json(cfg),
        "paradigms": [p.value for p in paradigms],
        "models": [b.identity for b in backends],
        "queries": len(instance.queries),
        "denominator": "one query per indicator per company for the latest fiscal year",
        "transcript_misses": misses,
        "aborted": aborted,
    }
    return EvaluationRun(records, metadata)


# --- stratification -------------------------------------------------------

SOURCE_ROWS = {
    Source.DIRECT: "Direct Extraction",
    Source.INTRA_TABLE: "Intra-table Calc",
    Source.CROSS_TABLE: "Cross-table Calc",
}
# implicit lookups and multi-step calculations share one reported bucket
DIFFICULTY_ROWS = {
    Difficulty.EXPLICIT: "Explicit Keys",
    Difficulty.IMPLICIT: "Implicit Calc",
    Difficulty.MULTI_STEP: "Implicit Calc",
    Difficulty.AMBIGUOUS: "Ambiguous Keys",
}
UNIT_ROWS = {
    Unit.CURRENCY: "Currency (RMB)",
    Unit.DAYS: "Days",
    Unit.PERCENTAGE: "Percentage (%)",
    Unit.RATIO: "Ratio (Times)",
}
INDICATOR_ROWS = {
    IndicatorId.NET_PROFIT_GROWTH: "Net Profit Growth",
    IndicatorId.ROE: "Return on Equity (ROE)",
    IndicatorId.INVENTORY_DAYS: "Inventory Turnover Days",
    IndicatorId.AR_DAYS: "Accounts Receivable Turnover Days",
    IndicatorId.ASSET_TURNOVER: "Asset Turnover",
    IndicatorId.ROA: "Return on Assets (ROA)",
    IndicatorId.CURRENT_RATIO: "Current Ratio",
    IndicatorId.OCF: "Operating Cash Flow (OCF)",
    IndicatorId.FCF: "Free Cash Flow (FCF)",
    IndicatorId.REVENUE_GROWTH: "Revenue Growth",
    IndicatorId.DEBT_RATIO: "Debt Ratio",
    IndicatorId.QUICK_RATIO: "Quick Ratio",
    IndicatorId.NET_MARGIN: "Net Margin",
    IndicatorId.GROSS_MARGIN: "Gross Margin",
}
TOTAL_AVERAGE = "Total Average"

DIMENSIONS = {
    "source": ("Results By Source (Calc Path)", list(dict.fromkeys(SOURCE_ROWS.values()))),
    "difficulty": ("Results By Difficulty (Key Mapping)", list(dict.fromkeys(DIFFICULTY_ROWS.values()))),
    "unit": ("Results By Unit (Format)", list(dict.fromkeys(UNIT_ROWS.values()))),
    "indicator": ("Results for Detailed Indicators", list(INDICATOR_ROWS.values()) + [TOTAL_AVERAGE]),
}


def bucket_of(dimension: str, indicator: IndicatorId) -> str:
    tags = classify(indicator)
    if dimension == "source":
        return SOURCE_ROWS[tags.source]
    if dimension == "difficulty":
        return DIFFICULTY_ROWS[tags.difficulty]
    if dimension == "unit":
        return UNIT_ROWS[tags.unit]
    if dimension == "indicator":
        return INDICATOR_ROWS[indicator]
    raise KeyError(dimension)


def percent(correct: int, total: int) -> Decimal:
    """Accuracy in percent, unrounded."""
    return _CTX.divide(_CTX.multiply(Decimal(correct), _HUNDRED), Decimal(total))


def one_decimal(value: Decimal) -> str:
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Cell:
    correct: int
    total: int

    @property
    def accuracy(self) -> Decimal:
        return percent(self.correct, self.total)

    @property
    def display(self) -> str:
        return one_decimal(self.accuracy)


@dataclass
class StratifiedReport:
    """``tables[dimension][(row, paradigm, model)]`` plus per-model total averages."""

    tables: dict[str, dict[tuple[str, str, str], Cell]]
    total_average: dict[tuple[str, str], Decimal]
    paradigms: list[str]
    models: list[str]
    metadata: dict = field(default_factory=dict)

    def cell(self, dimension: str, row: str, paradigm: str, model: str | None = None) -> str:
        """One-decimal display of a cell, e.g. ``cell("source", "Cross-table Calc", "pot")``."""
        model = model or self.models[0]
        paradigm = Paradigm(paradigm).value
        if dimension == "indicator" and row == TOTAL_AVERAGE:
            return one_decimal(self.total_average[(paradigm, model)])
        return self.tables[dimension][(row, paradigm, model)].display

    def accuracy(self, dimension: str, row: str, paradigm: str, model: str | None = None) -> Decimal:
        model = model or self.models[0]
        paradigm = Paradigm(paradigm).value
        if dimension == "indicator" and row == TOTAL_AVERAGE:
            return self.total_average[(paradigm, model)]
        return self.tables[dimension][(row, paradigm, model)].accuracy

    def rows(self, dimension: str) -> list[str]:
        present = {r for (r, _, _) in self.tables[dimension]}
        ordered = [r for r in DIMENSIONS[dimension][1] if r in present]
        if dimension == "indicator" and self.total_average:
            ordered.append(TOTAL_AVERAGE)
        return ordered

    def to_json_obj(self) -> dict:
        tables = {}
        for dim, cells in self.tables.items():
            tables[dim] = [
                {
                    "row": row,
                    "paradigm": p,
                    "model": m,
                    "correct": c.correct,
                    "total": c.total,
                    "accuracy": one_decimal(c.accuracy),
                }
                for (row, p, m), c in sorted(cells.items(), key=self._sort_key(dim))
            ]
        totals = [
            {"paradigm": p, "model": m, "accuracy": one_decimal(self.total_average[(p, m)])}
            for m in self.models
            for p in self.paradigms
            if (p, m) in self.total_average
        ]
        return {"paradigms": self.paradigms, "models": self.models, "tables": tables, "total_average": totals}

    def _sort_key(self, dim):
        order = DIMENSIONS[dim][1]

        def key(item):
            (row, p, m), _ = item
            return (order.index(row), self.models.index(m), self.paradigms.index(p))

        return key


def stratify(records, metadata: dict | None = None) -> StratifiedReport:
    """Bucket records along every dimension; permutation-invariant in ``records``."""
    records = list(records)
    if not records:
        raise EmptyInput("no evaluation records to stratify")
    paradigm_order = [p.value for p in Paradigm]
    paradigms = sorted({r.paradigm.value for r in records}, key=paradigm_order.index)
    models = sorted({r.model for r in records})
    counts: dict[str, dict[tuple[str, str, str], list[int]]] = {d: {} for d in DIMENSIONS}
    for r in records:
        for dim in DIMENSIONS:
            cell = counts[dim].setdefault((bucket_of(dim, r.indicator), r.paradigm.value, r.model), [0, 0])
            cell[0] += int(r.correct)
            cell[1] += 1
    tables = {dim: {k: Cell(c, t) for k, (c, t) in cells.items()} for dim, cells in counts.items()}

    total_average = {}
    for m in models:
        for p in paradigms:
            accs = [c.accuracy for (row, pp, mm), c in tables["indicator"].items() if pp == p and mm == m]
            if accs:
                total = accs[0]
                for a in accs[1:]:
                    total = _CTX.add(total, a)
                total_average[(p, m)] = _CTX.divide(total, Decimal(len(accs)))
    return StratifiedReport(tables, total_average, paradigms, models, dict(metadata or {}))


# --- output ---------------------------------------------------------------

_PARADIGM_LABEL = {"direct": "Direct", "cot": "CoT", "pot": "PoT"}
CURVE_ORDER = list(SOURCE_ROWS.values())


def render_markdown(report: StratifiedReport) -> str:
    out = []
    for n, (dim, (title, _)) in enumerate(DIMENSIONS.items(), start=1):
        out.append(f"Table {n}: {title}")
        out.append("")
        out.append("| Category | Model | " + " | ".join(report.models) + " |")
        out.append("|---|---|" + "---|" * len(report.models))
        for row in report.rows(dim):
            for i, p in enumerate(report.paradigms):
                cells = []
                for m in report.models:
                    try:
                        cells.append(report.cell(dim, row, p, m))
                    except KeyError:
                        cells.append("-")
                label = row if i == 0 else ""
                out.append(f"| {label} | {_PARADIGM_LABEL[p]} | " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out)


def render_csv(report: StratifiedReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dimension", "row", "paradigm", "model", "correct", "total", "accuracy"])
    for dim in DIMENSIONS:
        for row in report.rows(dim):
            for m in report.models:
                for p in report.paradigms:
                    if dim == "indicator" and row == TOTAL_AVERAGE:
                        if (p, m) in report.total_average:
                            w.writerow([dim, row, p, m, "", "", report.cell(dim, row, p, m)])
                        continue
                    c = report.tables[dim].get((row, p, m))
                    if c is not None:
                        w.writerow([dim, row, p, m, c.correct, c.total, c.display])
    return buf.getvalue()


def emit_curve(report: StratifiedReport) -> dict[tuple[str, str], list[tuple[str, Decimal]]]:
    """Source-dimension accuracy per (paradigm, model), ordered Direct -> Intra -> Cross."""
    out = {}
    for m in report.models:
        for p in report.paradigms:
            series = [
                (row, report.tables["source"][(row, p, m)].accuracy)
                for row in CURVE_ORDER
                if (row, p, m) in report.tables["source"]
            ]
            out[(p, m)] = series
    return out


def render_curve_csv(report: StratifiedReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bucket", "paradigm", "model", "accuracy"])
    for (p, m), series in emit_curve(report).items():
        for row, acc in series:
            w.writerow([row, p, m, one_decimal(acc)])
    return buf.getvalue()


def render_json(report: StratifiedReport, records=None) -> str:
    obj = {"metadata": report.metadata, "report": report.to_json_obj()}
    if records is not None:
        obj["records"] = [r.to_json_obj() for r in records]
    return json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n"


REPORT_FILES = {"json": "report.json", "csv": "tables.csv", "markdown": "report.md"}


def emit_report(report: StratifiedReport, out_dir, formats=("json", "csv", "markdown"), *, records=None, curve=True) -> list[Path]:
    """Write the requested formats (plus ``curve.csv`` when any is written).

    Returns the written paths.  ``OSError`` propagates.
    """
    formats = list(formats)
    unknown = set(formats) - set(REPORT_FILES)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if not formats:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    renderers = {
        "json": lambda: render_json(report, records),
        "csv": lambda: render_csv(report),
        "markdown": lambda: render_markdown(report),
    }
    for fmt in ("json", "csv", "markdown"):
        if fmt in formats:
            path = out / REPORT_FILES[fmt]
            path.write_bytes(renderers[fmt]().encode("utf-8"))
            written.append(path)
    if curve:
        path = out / "curve.csv"
        path.write_bytes(render_curve_csv(report).encode("utf-8"))
        written.append(path)
    return written

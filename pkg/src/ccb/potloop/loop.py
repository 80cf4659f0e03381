"""The dual-phase pipeline and the two prose baselines.

Phase 1 asks the model, acting only as a reader, for a calculation schema.
Phase 2 asks for a program over that schema, executes it in the DSL
sandbox, validates the results and, on failure, feeds the formatted
exception vector back together with the prior code and the schema.  The
loop stops at the first validated result or after ``max_depth`` attempts.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .. import calcdsl
from ..calcdsl import DslProgram, ExceptionRecord, ExecutionOutcome
from ..errors import BackendError, CCBError, NumberFormat, SchemaParse
from ..indicators import IndicatorId
from ..schema import CalculationSchema, Defect, normalize_magnitude, parse_schema
from ..statements import Scope
from . import prompts
from .backends import DecodingParams, LlmBackend

logger = logging.getLogger(__name__)


class Paradigm(str, Enum):
    DIRECT = "direct"
    COT = "cot"
    POT = "pot"


@dataclass(frozen=True)
class LoopConfig:
    max_depth: int = 3
    decoding: DecodingParams = DecodingParams()
    phase1_reask: bool = False

    def __post_init__(self):
        if not 1 <= self.max_depth <= 10:
            raise ValueError(f"max_depth must be within 1..10, got {self.max_depth}")


@dataclass(frozen=True)
class QueryContext:
    document_text: str
    targets: tuple[IndicatorId, ...]
    company_id: str
    fiscal_year: int
    scope: Scope = Scope.CONSOLIDATED

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(IndicatorId(t) for t in self.targets))
        if not self.targets:
            raise ValueError("a query needs at least one target")


class Terminal(str, Enum):
    SUCCESS = "success"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class Iteration:
    code: str
    program: DslProgram | None
    parse_errors: tuple[ExceptionRecord, ...]
    outcome: ExecutionOutcome
    feedback: str | None


@dataclass
class LoopTrace:
    iterations: list[Iteration] = field(default_factory=list)
    terminal: Terminal | None = None

    def __len__(self) -> int:
        return len(self.iterations)

    def summary(self) -> dict:
        return {
            "terminal": self.terminal.value if self.terminal else None,
            "depth": len(self.iterations),
            "exceptions": [[str(e) for e in it.outcome.exceptions] for it in self.iterations],
        }


class Phase1Failure(CCBError):
    """The phase-1 reply broke the schema contract."""

    def __init__(self, raw_output: str, defects: list[Defect]):
        super().__init__("; ".join(str(d) for d in defects) or "schema contract violated")
        self.raw_output = raw_output
        self.defects = defects


@dataclass(frozen=True)
class Answer:
    """A model's answer as declared: numeric value plus the unit text it wrote.

    ``unit_text == "native"`` marks values already in the oracle's
    representation (fractions for percentages), as produced by executed code.
    """

    value: Decimal
    unit_text: str = ""


class _NoAnswer:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoAnswer"

    def __bool__(self) -> bool:
        return False


NoAnswer = _NoAnswer()


@dataclass
class QueryResult:
    answers: dict[IndicatorId, Answer | _NoAnswer]
    trace: LoopTrace | None = None
    schema: CalculationSchema | None = None
    failure: str | None = None


# --- phase 1 --------------------------------------------------------------


def _phase1_attempt(backend: LlmBackend, prompt: str, ctx: QueryContext, cfg: LoopConfig) -> CalculationSchema:
    reply = backend.complete(prompt, cfg.decoding)
    try:
        schema, defects = parse_schema(reply)
    except SchemaParse as exc:
        raise Phase1Failure(reply, [Defect("ContractViolation", detail=str(exc))]) from None
    if set(schema.targets) != set(ctx.targets):
        defects.append(
            Defect(
                "TargetMismatch",
                ",".join(t.value for t in schema.targets),
                detail=f"expected {', '.join(t.value for t in ctx.targets)}",
            )
        )
    if defects:
        raise Phase1Failure(reply, defects)
    return schema


def run_phase1(backend: LlmBackend, ctx: QueryContext, cfg: LoopConfig = LoopConfig()) -> CalculationSchema:
    """Elicit and parse the calculation schema.

    Raises :class:`Phase1Failure` on a contract violation and lets
    :class:`BackendError` through.  With ``cfg.phase1_reask`` one retry is
    made, quoting the defects.
    """
    try:
        return _phase1_attempt(backend, prompts.schema_extraction_prompt(ctx), ctx, cfg)
    except Phase1Failure as failure:
        if not cfg.phase1_reask:
            raise
        diagnostics = "\n".join(f"- {d}" for d in failure.defects)
        return _phase1_attempt(backend, prompts.schema_reask_prompt(ctx, diagnostics), ctx, cfg)


# --- phase 2 --------------------------------------------------------------


def validate_results(outcome: ExecutionOutcome, targets) -> list[Defect]:
    """Empty list means the result set is accepted."""
    defects: list[Defect] = []
    if outcome.exceptions:
        defects.append(Defect("ExecutionFailed", detail=f"{len(outcome.exceptions)} exception(s)"))
    for t in targets:
        name = IndicatorId(t).value
        value = outcome.results.get(name)
        if value is None:
            defects.append(Defect("MissingTarget", name))
        elif not value.is_finite():
            defects.append(Defect("NonFinite", name))
    return defects


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_code(reply: str) -> str:
    """Program text from a reply: the first fenced block, else the whole reply."""
    m = _FENCE_RE.search(reply)
    code = m.group(1) if m else reply
    return code.strip("\n") + "\n"


def _feedback(outcome: ExecutionOutcome, defects: list[Defect], code: str) -> str:
    parts = []
    if outcome.exceptions:
        parts.append(calcdsl.format_exceptions(outcome.exceptions, code))
    extra = [d for d in defects if d.kind != "ExecutionFailed"]
    if extra:
        lines = ["Result validation failed:"]
        for d in extra:
            if d.kind == "MissingTarget":
                lines.append(f"- target `{d.subject}` has no result; the program must contain `output {d.subject}`")
            else:
                lines.append(f"- {d}")
        parts.append("\n".join(lines) + "\n")
    return "\n".join(parts)


def run_phase2(
    backend: LlmBackend, schema: CalculationSchema, cfg: LoopConfig = LoopConfig()
) -> tuple[ExecutionOutcome, LoopTrace]:
    """Generate, execute, validate and repair code for ``schema``."""
    trace = LoopTrace()
    env = schema.env()
    prompt = prompts.code_generation_prompt(schema)
    outcome = ExecutionOutcome({}, (), ())
    for t in range(cfg.max_depth):
        try:
            reply = backend.complete(prompt, cfg.decoding)
        except BackendError as exc:
            exc.trace = trace
            raise
        code = extract_code(reply)
        parsed = calcdsl.parse_dsl(code)
        if isinstance(parsed, list):
            program, parse_errors = None, tuple(parsed)
            outcome = ExecutionOutcome({}, parse_errors, ())
        else:
            program, parse_errors = parsed, ()
            outcome = calcdsl.execute(parsed, env)
        defects = validate_results(outcome, schema.targets)
        if not defects:
            trace.iterations.append(Iteration(code, program, parse_errors, outcome, None))
            trace.terminal = Terminal.SUCCESS
            return outcome, trace
        feedback = _feedback(outcome, defects, code)
        trace.iterations.append(Iteration(code, program, parse_errors, outcome, feedback))
        logger.debug("phase 2 iteration %d failed: %s", t, ", ".join(map(str, defects)))
        prompt = prompts.code_correction_prompt(schema, code, feedback)
    trace.terminal = Terminal.EXHAUSTED
    return outcome, trace


# --- prose baselines ------------------------------------------------------

_MARKER_RE = re.compile(r"^\s*FINAL_ANSWER\s+(?P<id>[A-Za-z_]+)\s*=\s*(?P<rest>.+?)\s*$", re.MULTILINE)


def parse_answer_text(text: str) -> Answer | None:
    """``"10.0 %"`` -> Answer(10.0, "%"); ``"1.2 billion RMB"`` -> Answer(1.2e9, "RMB")."""
    text = text.strip().rstrip(".")
    if text.endswith("%"):
        try:
            return Answer(normalize_magnitude(text[:-1]).value, "%")
        except NumberFormat:
            return None
    tokens = text.split()
    for k in range(len(tokens), 0, -1):
        try:
            lit = normalize_magnitude(" ".join(tokens[:k]))
        except NumberFormat:
            continue
        return Answer(lit.value, " ".join(tokens[k:]))
    return None


def extract_answers(reply: str, targets) -> dict[IndicatorId, Answer | _NoAnswer]:
    """Read ``FINAL_ANSWER <id> = <value> [unit]`` lines; the last one per id wins."""
    found: dict[str, str] = {}
    for m in _MARKER_RE.finditer(reply):
        found[m.group("id").lower()] = m.group("rest")
    out: dict[IndicatorId, Answer | _NoAnswer] = {}
    for t in targets:
        t = IndicatorId(t)
        raw = found.get(t.value)
        parsed = parse_answer_text(raw) if raw is not None else None
        out[t] = parsed if parsed is not None else NoAnswer
    return out


def run_direct(backend: LlmBackend, ctx: QueryContext, cfg: LoopConfig = LoopConfig()):
    reply = backend.complete(prompts.direct_prompt(ctx), cfg.decoding)
    return extract_answers(reply, ctx.targets)


def run_cot(backend: LlmBackend, ctx: QueryContext, cfg: LoopConfig = LoopConfig()):
    reply = backend.complete(prompts.cot_prompt(ctx), cfg.decoding)
    return extract_answers(reply, ctx.targets)


def run_query(
    backend: LlmBackend, ctx: QueryContext, paradigm: Paradigm | str, cfg: LoopConfig = LoopConfig()
) -> QueryResult:
    """Answer every target of ``ctx`` under ``paradigm``.

    Model misbehaviour never raises; it degrades to ``NoAnswer``.  Only
    :class:`BackendError` escapes.
    """
    paradigm = Paradigm(paradigm)
    if paradigm is Paradigm.DIRECT:
        return QueryResult(run_direct(backend, ctx, cfg))
    if paradigm is Paradigm.COT:
        return QueryResult(run_cot(backend, ctx, cfg))

    none = {t: NoAnswer for t in ctx.targets}
    try:
        schema = run_phase1(backend, ctx, cfg)
    except Phase1Failure as failure:
        return QueryResult(none, failure=f"phase1: {failure}")
    outcome, trace = run_phase2(backend, schema, cfg)
    answers: dict[IndicatorId, Answer | _NoAnswer] = dict(none)
    for t in ctx.targets:
        value = outcome.results.get(t.value)
        if value is not None and value.is_finite():
            answers[t] = Answer(value, "native")
    failure = None if trace.terminal is Terminal.SUCCESS else "phase2: exhausted"
    return QueryResult(answers, trace, schema, failure)

"""An offline stand-in for a language model.

:class:`SimulatedAnalyst` answers every prompt the pipeline can send.  It
always reads the document correctly (retrieval is perfect) but, in the
prose paradigms, each arithmetic operation it performs goes wrong with a
configurable probability.  Program-of-thought replies carry no arithmetic
at all, so they stay exact.  This isolates the arithmetic-hallucination
effect from retrieval noise.

Replies are a deterministic function of ``(seed, prompt)``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from decimal import Decimal

from .. import calcdsl
from ..benchgen import document_rows
from ..calcdsl import Binary, Call, Days, Neg, Number, Variable
from ..errors import BackendError
from ..indicators import DAYS_IN_YEAR, INDICATORS, IndicatorId, Unit, required_inputs
from ..numtext import DECIMAL_CONTEXT, plain_text
from ..schema import CalculationSchema, normalize_magnitude, parse_schema, schema_program
from ..statements import AliasTable, LineItemKey, Scope, default_alias_table
from . import prompts
from .backends import DecodingParams, prompt_key

_CTX = DECIMAL_CONTEXT


@dataclass(frozen=True)
class _Cell:
    text: str
    label: str


def _locate(prompt: str, aliases: AliasTable):
    header = prompts.parse_prompt_header(prompt)
    year = int(header["Fiscal year"])
    scope = Scope(header["Scope"])
    cells: dict[tuple[LineItemKey, int], _Cell] = {}
    kinds = {}
    for row in document_rows(prompts.prompt_document(prompt)):
        if row.scope is not scope:
            continue
        hit = aliases.resolve(row.label)
        if hit is None:
            continue
        cells.setdefault((hit[0], row.fiscal_year), _Cell(row.text, row.label))
        kinds[(hit[0], row.fiscal_year)] = row.kind
    return year, scope, cells, kinds


def _inputs_for(target: IndicatorId, year: int, cells) -> dict[str, tuple[LineItemKey, int, _Cell]]:
    out = {}
    for req in sorted(required_inputs(target), key=lambda r: r.var_name):
        key, y = req.key, year + req.offset
        cell = cells.get((key, y))
        if cell is None and key is LineItemKey.NET_INCOME_PARENT:
            key = LineItemKey.NET_INCOME
            cell = cells.get((key, y))
        if cell is None:
            raise KeyError(f"{req.key.value} for {y} not found in the document")
        out[req.var_name] = (key, y, cell)
    return out


def _significant(value: Decimal, digits: int = 10) -> Decimal:
    if value.is_zero():
        return value
    return value.quantize(Decimal(1).scaleb(value.adjusted() - digits + 1), context=_CTX)


def render_answer(value: Decimal, unit: Unit) -> str:
    """How the analyst writes an answer: percent sign, ``days`` or yuan."""
    if unit is Unit.PERCENTAGE:
        return f"{plain_text(_significant(_CTX.multiply(value, 100)))} %"
    if unit is Unit.DAYS:
        return f"{plain_text(_significant(value))} days"
    if unit is Unit.CURRENCY:
        return f"{plain_text(value)} yuan"
    return plain_text(_significant(value))


class SimulatedAnalyst:
    """Deterministic model stand-in.

    ``cot_error_rate`` and ``direct_error_rate`` are per-operation
    probabilities of an arithmetic slip in those paradigms.
    ``code_fault_rate`` is the chance that a first-attempt program contains
    a bug (fixed when the correction prompt arrives).
    """

    def __init__(
        self,
        *,
        cot_error_rate: float = 0.15,
        direct_error_rate: float = 0.3,
        code_fault_rate: float = 0.0,
        seed: int = 0,
        identity: str | None = None,
        aliases: AliasTable | None = None,
    ):
        for name, p in (("cot", cot_error_rate), ("direct", direct_error_rate), ("code", code_fault_rate)):
            if not 0 <= p <= 1:
                raise ValueError(f"{name} rate must lie in [0, 1]")
        self.cot_error_rate = cot_error_rate
        self.direct_error_rate = direct_error_rate
        self.code_fault_rate = code_fault_rate
        self.seed = seed
        self.aliases = aliases or default_alias_table()
        self.identity = identity or (
            f"simulated(cot={cot_error_rate},direct={direct_error_rate},code={code_fault_rate},seed={seed})"
        )

    @classmethod
    def perfect(cls, **kwargs) -> SimulatedAnalyst:
        return cls(cot_error_rate=0.0, direct_error_rate=0.0, code_fault_rate=0.0, identity="perfect", **kwargs)

    def _rng(self, prompt: str) -> random.Random:
        return random.Random(f"{self.seed}:{prompt_key(prompt)}")

    def complete(self, prompt: str, params: DecodingParams = DecodingParams()) -> str:
        task = prompts.task_of(prompt)
        rng = self._rng(prompt)
        if task in ("schema-extraction", "schema-extraction-retry"):
            return self._schema(prompt)
        if task == "code-generation":
            return self._code(prompt, rng, first=True)
        if task == "code-correction":
            return self._code(prompt, rng, first=False)
        if task == "direct-answer":
            return self._prose(prompt, rng, self.direct_error_rate, reasoning=False)
        if task == "chain-of-thought":
            return self._prose(prompt, rng, self.cot_error_rate, reasoning=True)
        raise BackendError(f"simulated analyst cannot handle prompt task {task!r}")

    # phase 1: copy literals exactly as printed, with provenance
    def _schema(self, prompt: str) -> str:
        year, scope, cells, kinds = _locate(prompt, self.aliases)
        targets = prompts.prompt_targets(prompt)
        lines = ["Reading the statements.", "", "===SCHEMA===", "TARGETS: " + ", ".join(t.value for t in targets)]
        seen = set()
        for t in targets:
            for var, (key, y, cell) in _inputs_for(t, year, cells).items():
                if var in seen:
                    continue
                seen.add(var)
                lines.append(f"VAR {var} = {cell.text} # {kinds[(key, y)].value} | {scope.value} | {y} | {cell.label}")
        for t in targets:
            lines.append(f"FORMULA {t.value} = {INDICATORS[t].dsl}")
        lines.append("===END===")
        return "\n".join(lines) + "\n"

    def _code(self, prompt: str, rng: random.Random, *, first: bool) -> str:
        schema, _ = parse_schema(prompt)
        program = schema_program(schema)
        if first and rng.random() < self.code_fault_rate:
            program = _inject_fault(program, schema, rng)
        return f"```\n{program}```\n"

    def _prose(self, prompt: str, rng: random.Random, p: float, *, reasoning: bool) -> str:
        year, _, cells, _ = _locate(prompt, self.aliases)
        out = []
        finals = []
        for t in prompts.prompt_targets(prompt):
            inputs = _inputs_for(t, year, cells)
            env = {var: normalize_magnitude(cell.text).value for var, (_, _, cell) in inputs.items()}
            if reasoning:
                out.append(f"{INDICATORS[t].name}:")
                for var, (_, y, cell) in inputs.items():
                    out.append(f"  {cell.label} ({y}) = {cell.text}")
            value = _noisy_eval(calcdsl.parse_expression(INDICATORS[t].dsl), env, rng, p, out if reasoning else None)
            finals.append(f"FINAL_ANSWER {t.value} = {render_answer(value, INDICATORS[t].tags.unit)}")
        if reasoning:
            out.append("")
        return "\n".join(out + finals) + "\n"


def _slip(value: Decimal, rng: random.Random, p: float) -> Decimal:
    if p <= 0 or rng.random() >= p:
        return value
    delta = Decimal(rng.randint(20, 250)).scaleb(-3)
    factor = 1 + delta if rng.random() < 0.5 else 1 - delta
    return _CTX.multiply(value, factor)


def _noisy_eval(expr, env, rng: random.Random, p: float, log: list | None) -> Decimal:
    """Evaluate with each operation independently corrupted with probability ``p``.

    ``avg`` counts as two operations (a sum and a halving).
    """
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, Days):
        return DAYS_IN_YEAR
    if isinstance(expr, Variable):
        return env[expr.name]
    if isinstance(expr, Neg):
        return _CTX.minus(_noisy_eval(expr.operand, env, rng, p, log))
    if isinstance(expr, Call):
        args = [_noisy_eval(a, env, rng, p, log) for a in expr.args]
        if expr.fn != "avg":
            raise ValueError(f"simulated analyst does not evaluate {expr.fn}()")
        total = args[0]
        for a in args[1:]:
            total = _slip(_CTX.add(total, a), rng, p)
        result = _slip(_CTX.divide(total, len(args)), rng, p)
    else:
        left = _noisy_eval(expr.left, env, rng, p, log)
        right = _noisy_eval(expr.right, env, rng, p, log)
        exact = {"+": _CTX.add, "-": _CTX.subtract, "*": _CTX.multiply, "/": _CTX.divide}[expr.op](left, right)
        result = _slip(exact, rng, p)
    if log is not None:
        log.append(f"  {calcdsl.pretty_expr(expr)} = {plain_text(_significant(result, 12))}")
    return result


def _inject_fault(program: str, schema: CalculationSchema, rng: random.Random) -> str:
    """One of three typical first-draft bugs."""
    lines = program.splitlines()
    kind = rng.choice(("typo", "syntax", "no_output"))
    if kind == "typo" and schema.bindings:
        name = schema.bindings[0].name
        lines[0] = lines[0].replace(name, name + "_value", 1) if name in lines[0] else lines[0] + f" + {name}_value"
    elif kind == "syntax":
        lines[0] = lines[0] + " +"
    else:
        lines = [l for l in lines if not l.startswith("output ")] + ["result = 0"]
    return "\n".join(lines) + "\n"

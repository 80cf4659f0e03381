"""Calculation schemas: normalized variable bindings plus per-target formulas.

The phase-1 model reply must contain exactly one block of the form::

    ===SCHEMA===
    TARGETS: roe
    VAR net_income = 12 # income_statement | consolidated | 2023 | Net Income
    VAR eq_prev = 100
    VAR eq_cur = 140
    FORMULA roe = net_income / avg(eq_prev, eq_cur)
    ===END===

Lines may appear in any order.  Provenance after ``#`` is optional and
uses ``kind | scope | year | raw label``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

from . import calcdsl
from .errors import NumberFormat, SchemaParse
from .indicators import IndicatorId
from .numtext import DECIMAL_CONTEXT, parse_number_text, plain_text
from .statements import Scope, StatementKind

SCHEMA_OPEN = "===SCHEMA==="
SCHEMA_CLOSE = "===END==="


@dataclass(frozen=True)
class NormalizedLiteral:
    value: Decimal
    original_text: str
    scale_applied: Decimal = Decimal(1)


def normalize_magnitude(text: str) -> NormalizedLiteral:
    """Turn ``"10 billion"``, ``"3.5亿"`` or ``"(1,234.56)万"`` into an exact decimal."""
    if not text or not text.strip():
        raise NumberFormat("empty numeric text")
    mantissa, exponent = parse_number_text(text)
    return NormalizedLiteral(mantissa.scaleb(exponent, DECIMAL_CONTEXT), text, Decimal(1).scaleb(exponent))


@dataclass(frozen=True)
class Provenance:
    kind: StatementKind
    scope: Scope
    fiscal_year: int
    raw_label: str

    def render(self) -> str:
        return f"{self.kind.value} | {self.scope.value} | {self.fiscal_year} | {self.raw_label}"


@dataclass(frozen=True)
class VariableBinding:
    name: str
    literal: NormalizedLiteral
    provenance: Provenance | None = None

    @property
    def value(self) -> Decimal:
        return self.literal.value


@dataclass(frozen=True)
class CalculationSchema:
    targets: tuple[IndicatorId, ...]
    bindings: tuple[VariableBinding, ...]
    formulas: tuple[tuple[IndicatorId, str], ...]

    def env(self) -> dict[str, Decimal]:
        return {b.name: b.value for b in self.bindings}

    def formula_for(self, target: IndicatorId) -> str | None:
        for t, text in self.formulas:
            if t is target:
                return text
        return None


@dataclass(frozen=True)
class Defect:
    kind: str
    subject: str = ""
    line: int | None = field(default=None, compare=False)
    detail: str = field(default="", compare=False)

    def __str__(self) -> str:
        s = f"{self.kind}({self.subject})" if self.subject else self.kind
        return f"{s}: {self.detail}" if self.detail else s


_IDENT = re.compile(r"[a-z_][a-z0-9_]*\Z")
_VAR_RE = re.compile(r"^VAR\s+(?P<name>\S+)\s*=\s*(?P<value>[^#]*?)\s*(?:#\s*(?P<prov>.*))?$")
_FORMULA_RE = re.compile(r"^FORMULA\s+(?P<id>\S+)\s*=\s*(?P<expr>.*?)\s*$")
_TARGETS_RE = re.compile(r"^TARGETS\s*:\s*(?P<ids>.*)$")


def _parse_provenance(text: str) -> Provenance | None:
    parts = [p.strip() for p in text.split("|", 3)]
    if len(parts) != 4:
        return None
    try:
        return Provenance(StatementKind(parts[0]), Scope(parts[1]), int(parts[2]), parts[3])
    except ValueError:
        return None


def extract_block(text: str) -> list[str]:
    """Lines between the schema fences.  Raises :class:`SchemaParse` if absent."""
    lines = text.splitlines()
    stripped = [l.strip() for l in lines]
    try:
        start = stripped.index(SCHEMA_OPEN)
    except ValueError:
        raise SchemaParse(f"no {SCHEMA_OPEN} block found") from None
    try:
        end = stripped.index(SCHEMA_CLOSE, start + 1)
    except ValueError:
        raise SchemaParse(f"{SCHEMA_OPEN} block is not closed by {SCHEMA_CLOSE}") from None
    return stripped[start + 1 : end]


def parse_schema(text: str) -> tuple[CalculationSchema, list[Defect]]:
    """Parse a phase-1 reply.

    Fatal problems (no block, no usable TARGETS line) raise
    :class:`SchemaParse`.  Everything else is reported in the returned defect
    list, which also includes :func:`validate_schema`'s findings.
    """
    body = extract_block(text)
    defects: list[Defect] = []
    targets: list[IndicatorId] | None = None
    bindings: list[VariableBinding] = []
    formulas: list[tuple[IndicatorId, str]] = []

    for n, line in enumerate(body, start=1):
        if not line:
            continue
        if m := _TARGETS_RE.match(line):
            if targets is not None:
                defects.append(Defect("DuplicateTargets", line=n))
                continue
            targets = []
            for raw in (t.strip() for t in m.group("ids").split(",")):
                if not raw:
                    continue
                try:
                    tid = IndicatorId(raw)
                except ValueError:
                    defects.append(Defect("UnknownTarget", raw, n))
                    continue
                if tid in targets:
                    defects.append(Defect("DuplicateTarget", raw, n))
                else:
                    targets.append(tid)
        elif m := _VAR_RE.match(line):
            name = m.group("name")
            try:
                literal = normalize_magnitude(m.group("value"))
            except NumberFormat as exc:
                defects.append(Defect("BadLiteral", name, n, str(exc)))
                continue
            prov = None
            if m.group("prov"):
                prov = _parse_provenance(m.group("prov"))
            bindings.append(VariableBinding(name, literal, prov))
        elif m := _FORMULA_RE.match(line):
            raw = m.group("id")
            try:
                tid = IndicatorId(raw)
            except ValueError:
                defects.append(Defect("UnknownTarget", raw, n))
                continue
            formulas.append((tid, m.group("expr")))
        else:
            defects.append(Defect("UnknownLine", line[:40], n))

    if not targets:
        raise SchemaParse("TARGETS section is missing or empty")
    schema = CalculationSchema(tuple(targets), tuple(bindings), tuple(formulas))
    defects.extend(validate_schema(schema))
    return schema, defects


def validate_schema(schema: CalculationSchema) -> list[Defect]:
    """Empty iff names are legal and unique, each target has one formula,
    and every formula parses and references only bound names or builtins."""
    defects: list[Defect] = []
    if not schema.targets:
        defects.append(Defect("NoTargets"))
    names: set[str] = set()
    for b in schema.bindings:
        if not _IDENT.match(b.name) or b.name in calcdsl.RESERVED:
            defects.append(Defect("IllegalName", b.name))
        if b.name in names:
            defects.append(Defect("DuplicateBinding", b.name))
        names.add(b.name)
        if not b.value.is_finite():
            defects.append(Defect("BadLiteral", b.name))

    seen: dict[IndicatorId, int] = {}
    for target, _ in schema.formulas:
        seen[target] = seen.get(target, 0) + 1
    for target in schema.targets:
        count = seen.get(target, 0)
        if count == 0:
            defects.append(Defect("MissingFormula", target.value))
        elif count > 1:
            defects.append(Defect("DuplicateFormula", target.value))
    for target in seen:
        if target not in schema.targets:
            defects.append(Defect("UntargetedFormula", target.value))

    for target, text in schema.formulas:
        parsed = calcdsl.parse_expression(text)
        if isinstance(parsed, list):
            defects.append(Defect("FormulaSyntax", target.value, detail=parsed[0].message))
            continue
        for name in sorted(calcdsl.free_variables(parsed)):
            if name not in names:
                defects.append(Defect("UnboundIdentifier", name))
    return defects


def render_schema(schema: CalculationSchema) -> str:
    """Canonical block text; :func:`parse_schema` reads it back unchanged."""
    lines = [SCHEMA_OPEN, "TARGETS: " + ", ".join(t.value for t in schema.targets)]
    for b in schema.bindings:
        line = f"VAR {b.name} = {plain_text(b.value)}"
        if b.provenance is not None:
            line += f" # {b.provenance.render()}"
        lines.append(line)
    for target, text in schema.formulas:
        lines.append(f"FORMULA {target.value} = {text}")
    lines.append(SCHEMA_CLOSE)
    return "\n".join(lines)


def schema_program(schema: CalculationSchema) -> str:
    """The straightforward program computing every target from the schema."""
    lines = []
    for target, text in schema.formulas:
        lines.append(f"{target.value} = {text}")
    for target in schema.targets:
        lines.append(f"output {target.value}")
    return "\n".join(lines) + "\n"

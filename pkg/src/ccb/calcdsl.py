"""A closed, loop-free calculation language and its hermetic evaluator.

Programs are newline-separated statements::

    roe = net_income / avg(eq_prev, eq_cur)   # comment
    output roe

Grammar::

    program := line+
    line    := IDENT "=" expr | "output" IDENT | "output" expr
    expr    := term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*
    factor  := NUMBER | IDENT | "DAYS" | call | "(" expr ")" | "-" factor
    call    := ("avg" | "abs" | "min" | "max") "(" expr ("," expr)* ")"
    IDENT   := [a-z_][a-z0-9_]*

``−``, ``×`` and ``÷`` are accepted as spellings of ``-``, ``*`` and ``/``.
Arithmetic is exact decimal; division rounds to 34 significant digits,
half-even.  Evaluation never raises: every failure becomes an
:class:`ExceptionRecord` and evaluation continues with the next statement.
"""

from __future__ import annotations

import decimal
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Mapping, Union

from .numtext import DECIMAL_CONTEXT, plain_text

MAX_STATEMENTS = 512
MAX_NODES_PER_STATEMENT = 256
MAX_NESTING = 64

FUNCTIONS = {"avg": (1, None), "abs": (1, 1), "min": (1, None), "max": (1, None)}
RESERVED = frozenset({"output", *FUNCTIONS})
BUILTIN_NAMES = frozenset({"DAYS", *FUNCTIONS})
DAYS_VALUE = Decimal(365)

# traps make overflow and invalid operations observable instead of silently non-finite
_EVAL_CONTEXT = DECIMAL_CONTEXT.copy()
_EVAL_CONTEXT.traps[decimal.Overflow] = True
_EVAL_CONTEXT.traps[decimal.InvalidOperation] = True
_EVAL_CONTEXT.traps[decimal.DivisionByZero] = True


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class Number:
    value: Decimal
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Variable:
    name: str
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Days:
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Neg:
    operand: Expr
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expr
    right: Expr
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple[Expr, ...]
    span: tuple[int, int] = field(default=(0, 0), compare=False)


Expr = Union[Number, Variable, Days, Neg, Binary, Call]


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Output:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


Stmt = Union[Assign, Output]


@dataclass(frozen=True)
class DslProgram:
    statements: tuple[Stmt, ...]

    @property
    def outputs(self) -> list[str]:
        return [s.name for s in self.statements if isinstance(s, Output)]


class ExceptionKind(str, Enum):
    SYNTAX_ERROR = "SyntaxError"
    UNDEFINED_VARIABLE = "UndefinedVariable"
    DIVISION_BY_ZERO = "DivisionByZero"
    NON_FINITE_RESULT = "NonFiniteResult"
    MISSING_OUTPUT = "MissingOutput"
    RESOURCE_LIMIT = "ResourceLimit"


@dataclass(frozen=True)
class ExceptionRecord:
    """One entry of the exception vector.

    ``location`` is a ``(start, end)`` character span for syntax errors and a
    0-based statement index for everything else.  ``line`` is the 1-based
    source line (0 when unknown).
    """

    kind: ExceptionKind
    message: str
    location: int | tuple[int, int]
    line: int = 0
    subject: str | None = None

    def __str__(self) -> str:
        where = f"{self.location[0]}..{self.location[1]}" if isinstance(self.location, tuple) else f"@{self.location}"
        subject = f"({self.subject})" if self.subject else ""
        return f"{self.kind.value}{subject}{where}"


@dataclass(frozen=True)
class ExecutionOutcome:
    results: dict[str, Decimal]
    exceptions: tuple[ExceptionRecord, ...]
    outputs: tuple[str, ...] = ()

    @property
    def success(self) -> bool:
        return not self.exceptions and all(name in self.results for name in self.outputs)


# --- lexer ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<number>\d+(?:\.\d+)?|\.\d+)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/−×÷])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<equals>=)
    """,
    re.VERBOSE,
)
_OP_CANON = {"−": "-", "×": "*", "÷": "/"}
_IDENT_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    start: int
    end: int


class _SyntaxFailure(Exception):
    def __init__(self, message: str, start: int, end: int):
        super().__init__(message)
        self.message = message
        self.start = start
        self.end = end


def _tokenize(line: str, offset: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise _SyntaxFailure(f"unexpected character {line[pos]!r}", offset + pos, offset + pos + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "word":
            if text == "DAYS":
                kind = "days"
            elif _IDENT_RE.match(text):
                kind = "ident"
            else:
                raise _SyntaxFailure(
                    f"invalid identifier {text!r} (identifiers are lowercase letters, digits and '_')",
                    offset + m.start(),
                    offset + m.end(),
                )
        if kind == "op":
            text = _OP_CANON.get(text, text)
        if kind != "ws":
            toks.append(_Tok(kind, text, offset + m.start(), offset + m.end()))
        pos = m.end()
    return toks


# --- parser ---------------------------------------------------------------


class _LineParser:
    def __init__(self, toks: list[_Tok], line_end: int):
        self.toks = toks
        self.i = 0
        self.line_end = line_end
        self.depth = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail_here(self, expected: str):
        tok = self.peek()
        prev = self.toks[self.i - 1] if self.i > 0 else None
        if tok is None:
            start = prev.start if prev is not None else self.line_end
            raise _SyntaxFailure(f"expected {expected} but the line ended", start, self.line_end)
        start = prev.start if prev is not None and prev.kind == "op" else tok.start
        raise _SyntaxFailure(f"expected {expected}, found {tok.text!r}", start, tok.end)

    def expect(self, kind: str, expected: str) -> _Tok:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            self.fail_here(expected)
        return self.take()

    def at_end(self):
        tok = self.peek()
        if tok is not None:
            raise _SyntaxFailure(f"unexpected {tok.text!r} after complete statement", tok.start, tok.end)

    def expr(self) -> Expr:
        node = self.term()
        while (tok := self.peek()) is not None and tok.kind == "op" and tok.text in "+-":
            self.take()
            rhs = self.term()
            node = Binary(tok.text, node, rhs, (node.span[0], rhs.span[1]))
        return node

    def term(self) -> Expr:
        node = self.factor()
        while (tok := self.peek()) is not None and tok.kind == "op" and tok.text in "*/":
            self.take()
            rhs = self.factor()
            node = Binary(tok.text, node, rhs, (node.span[0], rhs.span[1]))
        return node

    def factor(self) -> Expr:
        self.depth += 1
        if self.depth > MAX_NESTING:
            tok = self.peek() or self.toks[-1]
            raise _SyntaxFailure(f"expression nested deeper than {MAX_NESTING} levels", tok.start, tok.end)
        try:
            return self._factor()
        finally:
            self.depth -= 1

    def _factor(self) -> Expr:
        tok = self.peek()
        if tok is None:
            self.fail_here("a number, variable, call or '('")
        if tok.kind == "number":
            self.take()
            return Number(Decimal(tok.text), (tok.start, tok.end))
        if tok.kind == "days":
            self.take()
            return Days((tok.start, tok.end))
        if tok.kind == "op" and tok.text == "-":
            self.take()
            operand = self.factor()
            return Neg(operand, (tok.start, operand.span[1]))
        if tok.kind == "lparen":
            self.take()
            inner = self.expr()
            close = self.expect("rparen", "')'")
            # keep the inner node; parentheses are syntax only
            return _respan(inner, tok.start, close.end)
        if tok.kind == "ident":
            self.take()
            if tok.text in FUNCTIONS:
                return self.call(tok)
            if tok.text == "output":
                raise _SyntaxFailure("'output' is a keyword and cannot appear in an expression", tok.start, tok.end)
            return Variable(tok.text, (tok.start, tok.end))
        self.fail_here("a number, variable, call or '('")
        raise AssertionError("unreachable")  # pragma: no cover

    def call(self, name: _Tok) -> Call:
        self.expect("lparen", f"'(' after {name.text}")
        args = [self.expr()]
        while (tok := self.peek()) is not None and tok.kind == "comma":
            self.take()
            args.append(self.expr())
        close = self.expect("rparen", "',' or ')'")
        lo, hi = FUNCTIONS[name.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise _SyntaxFailure(
                f"{name.text}() takes {'exactly ' + str(hi) if hi == lo else 'at least ' + str(lo)} "
                f"argument(s), got {len(args)}",
                name.start,
                close.end,
            )
        return Call(name.text, tuple(args), (name.start, close.end))


def _respan(node: Expr, start: int, end: int) -> Expr:
    return type(node)(**{**node.__dict__, "span": (start, end)})


def _split_lines(text: str):
    """Yield ``(line_no, offset, code)`` with comments removed."""
    offset = 0
    for no, raw in enumerate(text.split("\n"), start=1):
        code = raw.split("#", 1)[0]
        yield no, offset, code
        offset += len(raw) + 1


def parse_dsl(text: str) -> DslProgram | list[ExceptionRecord]:
    """Parse a program; on failure return every line's syntax error (with spans)."""
    statements: list[Stmt] = []
    errors: list[ExceptionRecord] = []
    for line_no, offset, code in _split_lines(text):
        try:
            toks = _tokenize(code, offset)
            if not toks:
                continue
            statements.append(_parse_line(toks, offset + len(code.rstrip()), line_no))
        except _SyntaxFailure as f:
            errors.append(ExceptionRecord(ExceptionKind.SYNTAX_ERROR, f.message, (f.start, f.end), line_no))
    if not errors and not any(isinstance(s, Output) for s in statements):
        end = len(text)
        errors.append(
            ExceptionRecord(ExceptionKind.SYNTAX_ERROR, "program has no output statement", (end, end), 0)
        )
    return errors if errors else DslProgram(tuple(statements))


def _parse_line(toks: list[_Tok], line_end: int, line_no: int) -> Stmt:
    p = _LineParser(toks, line_end)
    first = toks[0]
    if first.kind == "ident" and first.text == "output":
        p.take()
        nxt = p.peek()
        if nxt is not None and nxt.kind == "ident" and len(toks) == 2 and nxt.text not in RESERVED:
            p.take()
            return Output(nxt.text, Variable(nxt.text, (nxt.start, nxt.end)), line_no)
        expr = p.expr()
        p.at_end()
        return Output(pretty_expr(expr), expr, line_no)
    if first.kind == "ident" and len(toks) > 1 and toks[1].kind == "equals":
        if first.text in RESERVED:
            raise _SyntaxFailure(f"{first.text!r} is reserved and cannot be assigned", first.start, first.end)
        p.take()
        p.take()
        expr = p.expr()
        p.at_end()
        return Assign(first.text, expr, line_no)
    raise _SyntaxFailure(
        "expected 'name = expression' or 'output ...'", first.start, toks[1].end if len(toks) > 1 else first.end
    )


def parse_expression(text: str) -> Expr | list[ExceptionRecord]:
    """Parse a single expression (used for schema formulas)."""
    errors: list[ExceptionRecord] = []
    try:
        toks = _tokenize(text, 0)
        if not toks:
            raise _SyntaxFailure("empty expression", 0, len(text))
        p = _LineParser(toks, len(text.rstrip()))
        expr = p.expr()
        p.at_end()
        return expr
    except _SyntaxFailure as f:
        errors.append(ExceptionRecord(ExceptionKind.SYNTAX_ERROR, f.message, (f.start, f.end), 1))
    return errors


def free_variables(expr: Expr) -> set[str]:
    if isinstance(expr, Variable):
        return {expr.name}
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, Binary):
        return free_variables(expr.left) | free_variables(expr.right)
    if isinstance(expr, Call):
        out: set[str] = set()
        for a in expr.args:
            out |= free_variables(a)
        return out
    return set()


def node_count(expr: Expr) -> int:
    if isinstance(expr, Neg):
        return 1 + node_count(expr.operand)
    if isinstance(expr, Binary):
        return 1 + node_count(expr.left) + node_count(expr.right)
    if isinstance(expr, Call):
        return 1 + sum(node_count(a) for a in expr.args)
    return 1


# --- pretty printer -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return _PREC[expr.op]
    if isinstance(expr, Neg):
        return 3
    return 4


def pretty_expr(expr: Expr) -> str:
    if isinstance(expr, Number):
        return plain_text(expr.value)
    if isinstance(expr, Variable):
        return expr.name
    if isinstance(expr, Days):
        return "DAYS"
    if isinstance(expr, Neg):
        inner = pretty_expr(expr.operand)
        return f"-({inner})" if isinstance(expr.operand, Binary) else f"-{inner}"
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(pretty_expr(a) for a in expr.args)})"
    p = _PREC[expr.op]
    left = pretty_expr(expr.left)
    if _prec(expr.left) < p:
        left = f"({left})"
    right = pretty_expr(expr.right)
    if _prec(expr.right) <= p:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


def pretty_print(program: DslProgram) -> str:
    lines = []
    for st in program.statements:
        if isinstance(st, Assign):
            lines.append(f"{st.name} = {pretty_expr(st.expr)}")
        elif isinstance(st.expr, Variable) and st.expr.name == st.name:
            lines.append(f"output {st.name}")
        else:
            lines.append(f"output {pretty_expr(st.expr)}")
    return "\n".join(lines) + "\n"


# --- evaluator ------------------------------------------------------------


class _Poisoned(Exception):
    """Expression depends on a name whose defining statement already failed."""


class _EvalFailure(Exception):
    def __init__(self, kind: ExceptionKind, message: str, subject: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.subject = subject


def _eval(expr: Expr, scope: Mapping[str, Decimal], poisoned: set[str]) -> Decimal:
    ctx = _EVAL_CONTEXT
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, Days):
        return DAYS_VALUE
    if isinstance(expr, Variable):
        if expr.name in poisoned:
            raise _Poisoned(expr.name)
        if expr.name not in scope:
            raise _EvalFailure(ExceptionKind.UNDEFINED_VARIABLE, f"name {expr.name!r} is not defined", expr.name)
        value = scope[expr.name]
        if not value.is_finite():
            raise _EvalFailure(ExceptionKind.NON_FINITE_RESULT, f"variable {expr.name!r} is {value}", expr.name)
        return value
    if isinstance(expr, Neg):
        return ctx.minus(_eval(expr.operand, scope, poisoned))
    if isinstance(expr, Call):
        args = [_eval(a, scope, poisoned) for a in expr.args]
        if expr.fn == "abs":
            return ctx.abs(args[0])
        if expr.fn == "min":
            out = args[0]
            for a in args[1:]:
                out = ctx.min(out, a)
            return out
        if expr.fn == "max":
            out = args[0]
            for a in args[1:]:
                out = ctx.max(out, a)
            return out
        total = args[0]
        for a in args[1:]:
            total = ctx.add(total, a)
        return ctx.divide(total, len(args))
    left = _eval(expr.left, scope, poisoned)
    right = _eval(expr.right, scope, poisoned)
    if expr.op == "+":
        return ctx.add(left, right)
    if expr.op == "-":
        return ctx.subtract(left, right)
    if expr.op == "*":
        return ctx.multiply(left, right)
    if right.is_zero():
        divisor = pretty_expr(expr.right)
        zeros = sorted(n for n in free_variables(expr.right) if n in scope and scope[n].is_zero())
        detail = f"; zero-valued variable(s): {', '.join(zeros)}" if zeros else ""
        raise _EvalFailure(
            ExceptionKind.DIVISION_BY_ZERO,
            f"division by zero in `{pretty_expr(expr)}`: divisor `{divisor}` evaluated to 0{detail}",
            divisor,
        )
    return ctx.divide(left, right)


def execute(program: DslProgram, env: Mapping[str, Decimal | int | str]) -> ExecutionOutcome:
    """Run ``program`` against ``env``; failures are collected, never raised."""
    scope: dict[str, Decimal] = {name: Decimal(v) for name, v in env.items()}
    poisoned: set[str] = set()
    results: dict[str, Decimal] = {}
    exceptions: list[ExceptionRecord] = []
    declared: dict[str, tuple[int, int]] = {}

    for idx, st in enumerate(program.statements):
        if idx >= MAX_STATEMENTS:
            exceptions.append(
                ExceptionRecord(
                    ExceptionKind.RESOURCE_LIMIT,
                    f"program exceeds {MAX_STATEMENTS} statements; remaining statements not evaluated",
                    idx,
                    st.line,
                )
            )
            break
        if isinstance(st, Output):
            declared.setdefault(st.name, (idx, st.line))
        target = st.name
        if node_count(st.expr) > MAX_NODES_PER_STATEMENT:
            exceptions.append(
                ExceptionRecord(
                    ExceptionKind.RESOURCE_LIMIT,
                    f"statement has more than {MAX_NODES_PER_STATEMENT} expression nodes",
                    idx,
                    st.line,
                )
            )
            poisoned.add(target)
            continue
        try:
            value = _eval(st.expr, scope, poisoned)
            if not value.is_finite():
                raise _EvalFailure(ExceptionKind.NON_FINITE_RESULT, f"`{target}` evaluated to {value}", target)
        except _Poisoned:
            poisoned.add(target)
            continue
        except _EvalFailure as f:
            exceptions.append(ExceptionRecord(f.kind, f.message, idx, st.line, f.subject))
            poisoned.add(target)
            continue
        except decimal.Overflow:
            exceptions.append(
                ExceptionRecord(
                    ExceptionKind.NON_FINITE_RESULT,
                    f"`{target}` overflowed the decimal range (exponent > {DECIMAL_CONTEXT.Emax})",
                    idx,
                    st.line,
                    target,
                )
            )
            poisoned.add(target)
            continue
        except decimal.InvalidOperation:
            exceptions.append(
                ExceptionRecord(
                    ExceptionKind.NON_FINITE_RESULT, f"`{target}` has no finite value", idx, st.line, target
                )
            )
            poisoned.add(target)
            continue
        if isinstance(st, Assign):
            scope[target] = value
            poisoned.discard(target)
        else:
            results[target] = value

    for name, (idx, line) in declared.items():
        if name not in results:
            exceptions.append(
                ExceptionRecord(ExceptionKind.MISSING_OUTPUT, f"output `{name}` was not produced", idx, line, name)
            )
    return ExecutionOutcome(results, tuple(exceptions), tuple(declared))


def run_source(text: str, env: Mapping[str, Decimal]) -> ExecutionOutcome:
    """Parse and execute; syntax errors come back as the outcome's exceptions."""
    parsed = parse_dsl(text)
    if isinstance(parsed, list):
        return ExecutionOutcome({}, tuple(parsed), ())
    return execute(parsed, env)


# --- diagnostics ----------------------------------------------------------


def format_exceptions(records: list[ExceptionRecord] | tuple[ExceptionRecord, ...], program_text: str) -> str:
    """Line-referenced diagnostic text for a correction prompt.  Deterministic."""
    lines = program_text.split("\n")
    out = [f"Execution failed with {len(records)} exception(s):"]
    for n, rec in enumerate(records, start=1):
        out.append("")
        if isinstance(rec.location, tuple):
            start, end = rec.location
            line_start = sum(len(l) + 1 for l in lines[: rec.line - 1]) if rec.line else 0
            out.append(f"[{n}] {rec.kind.value} at line {rec.line}, columns {start - line_start + 1}-{end - line_start}")
            if rec.line:
                src = lines[rec.line - 1]
                out.append(f"    > {src}")
                caret_from = start - line_start
                out.append("      " + " " * caret_from + "^" * max(1, end - start))
            out.append(f"    offending text: {program_text[start:end]!r}")
        else:
            out.append(f"[{n}] {rec.kind.value} at statement {rec.location + 1} (line {rec.line})")
            if rec.line and rec.line <= len(lines):
                out.append(f"    > {lines[rec.line - 1].rstrip()}")
        out.append(f"    {rec.message}")
    return "\n".join(out) + "\n"

"""Financial statement data model, statement-file I/O and line-item resolution.

A :class:`StatementSet` holds one company's statements keyed by
``(kind, scope, fiscal_year)``.  Labels arrive raw; :func:`resolve_statement_set`
maps them onto the canonical :class:`LineItemKey` vocabulary through an
:class:`AliasTable` using exact matching after whitespace/case folding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from importlib import resources
from typing import Any, Iterable, Mapping

from .errors import NumberFormat, SchemaViolation
from .numtext import DECIMAL_CONTEXT, parse_plain_decimal, plain_text


class StatementKind(str, Enum):
    BALANCE_SHEET = "balance_sheet"
    INCOME_STATEMENT = "income_statement"
    CASH_FLOW = "cash_flow"

    @property
    def abbrev(self) -> str:
        return {"balance_sheet": "BS", "income_statement": "IS", "cash_flow": "CFS"}[self.value]


class Scope(str, Enum):
    CONSOLIDATED = "consolidated"
    PARENT = "parent"


class AliasTier(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    AMBIGUOUS = "ambiguous"


class LineItemKey(str, Enum):
    """Canonical line-item vocabulary.  ``LineItemKey("nope")`` raises ``ValueError``."""

    # items consumed by the 14 indicators
    REVENUE = "revenue"
    COGS = "cogs"
    NET_INCOME = "net_income"
    NET_INCOME_PARENT = "net_income_parent"
    TOTAL_ASSETS = "total_assets"
    TOTAL_LIABILITIES = "total_liabilities"
    CURRENT_ASSETS = "current_assets"
    CURRENT_LIABILITIES = "current_liabilities"
    INVENTORY = "inventory"
    ACCOUNTS_RECEIVABLE = "accounts_receivable"
    PARENT_EQUITY = "parent_equity"
    TOTAL_EQUITY = "total_equity"
    OCF = "ocf"
    CAPEX = "capex"
    # distractors
    CASH = "cash"
    FIXED_ASSETS = "fixed_assets"
    INTANGIBLE_ASSETS = "intangible_assets"
    PREPAYMENTS = "prepayments"
    SHORT_TERM_BORROWINGS = "short_term_borrowings"
    ACCOUNTS_PAYABLE = "accounts_payable"
    CONTRACT_LIABILITIES = "contract_liabilities"
    MINORITY_INTEREST = "minority_interest"
    SELLING_EXPENSES = "selling_expenses"
    ADMIN_EXPENSES = "admin_expenses"
    RD_EXPENSES = "rd_expenses"
    FINANCE_EXPENSES = "finance_expenses"
    TAXES_AND_SURCHARGES = "taxes_and_surcharges"
    OPERATING_PROFIT = "operating_profit"
    TOTAL_PROFIT = "total_profit"
    INCOME_TAX = "income_tax"
    CASH_FROM_SALES = "cash_from_sales"
    CASH_PAID_TO_EMPLOYEES = "cash_paid_to_employees"
    TAXES_PAID = "taxes_paid"
    INVESTING_CASH_FLOW = "investing_cash_flow"
    FINANCING_CASH_FLOW = "financing_cash_flow"
    DIVIDENDS_PAID = "dividends_paid"
    DISPOSAL_PROCEEDS = "disposal_proceeds"
    CASH_END_OF_PERIOD = "cash_end_of_period"


_BS, _IS, _CF = StatementKind.BALANCE_SHEET, StatementKind.INCOME_STATEMENT, StatementKind.CASH_FLOW

#: The statement that houses each key.
KEY_KIND: dict[LineItemKey, StatementKind] = {
    LineItemKey.REVENUE: _IS,
    LineItemKey.COGS: _IS,
    LineItemKey.NET_INCOME: _IS,
    LineItemKey.NET_INCOME_PARENT: _IS,
    LineItemKey.TOTAL_ASSETS: _BS,
    LineItemKey.TOTAL_LIABILITIES: _BS,
    LineItemKey.CURRENT_ASSETS: _BS,
    LineItemKey.CURRENT_LIABILITIES: _BS,
    LineItemKey.INVENTORY: _BS,
    LineItemKey.ACCOUNTS_RECEIVABLE: _BS,
    LineItemKey.PARENT_EQUITY: _BS,
    LineItemKey.TOTAL_EQUITY: _BS,
    LineItemKey.OCF: _CF,
    LineItemKey.CAPEX: _CF,
    LineItemKey.CASH: _BS,
    LineItemKey.FIXED_ASSETS: _BS,
    LineItemKey.INTANGIBLE_ASSETS: _BS,
    LineItemKey.PREPAYMENTS: _BS,
    LineItemKey.SHORT_TERM_BORROWINGS: _BS,
    LineItemKey.ACCOUNTS_PAYABLE: _BS,
    LineItemKey.CONTRACT_LIABILITIES: _BS,
    LineItemKey.MINORITY_INTEREST: _BS,
    LineItemKey.SELLING_EXPENSES: _IS,
    LineItemKey.ADMIN_EXPENSES: _IS,
    LineItemKey.RD_EXPENSES: _IS,
    LineItemKey.FINANCE_EXPENSES: _IS,
    LineItemKey.TAXES_AND_SURCHARGES: _IS,
    LineItemKey.OPERATING_PROFIT: _IS,
    LineItemKey.TOTAL_PROFIT: _IS,
    LineItemKey.INCOME_TAX: _IS,
    LineItemKey.CASH_FROM_SALES: _CF,
    LineItemKey.CASH_PAID_TO_EMPLOYEES: _CF,
    LineItemKey.TAXES_PAID: _CF,
    LineItemKey.INVESTING_CASH_FLOW: _CF,
    LineItemKey.FINANCING_CASH_FLOW: _CF,
    LineItemKey.DIVIDENDS_PAID: _CF,
    LineItemKey.DISPOSAL_PROCEEDS: _CF,
    LineItemKey.CASH_END_OF_PERIOD: _CF,
}

#: Keys that no indicator consumes; used as rendering noise.
DISTRACTOR_KEYS: tuple[LineItemKey, ...] = tuple(LineItemKey)[14:]


@dataclass(frozen=True)
class LineItem:
    raw_label: str
    value: Decimal
    fiscal_year: int
    key: LineItemKey | None = None

    def __post_init__(self):
        if not isinstance(self.value, Decimal):
            raise TypeError(f"line item value must be Decimal, got {type(self.value).__name__}")
        if not self.value.is_finite():
            raise ValueError(f"non-finite line item value for {self.raw_label!r}")
        if self.key is not None and not isinstance(self.key, LineItemKey):
            object.__setattr__(self, "key", LineItemKey(self.key))


@dataclass(frozen=True)
class Statement:
    kind: StatementKind
    scope: Scope
    fiscal_year: int
    items: tuple[LineItem, ...]
    currency_unit: str = "CNY"

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        seen: set[LineItemKey] = set()
        for item in self.items:
            if item.fiscal_year != self.fiscal_year:
                raise SchemaViolation(
                    f"item {item.raw_label!r} has year {item.fiscal_year}, statement is {self.fiscal_year}"
                )
            if item.key is not None:
                if item.key in seen:
                    raise SchemaViolation(
                        f"key {item.key.value} resolved twice in {self.kind.value}/{self.scope.value}/{self.fiscal_year}"
                    )
                seen.add(item.key)

    @property
    def triple(self) -> tuple[StatementKind, Scope, int]:
        return (self.kind, self.scope, self.fiscal_year)

    def get(self, key: LineItemKey) -> Decimal | None:
        for item in self.items:
            if item.key is key:
                return item.value
        return None


@dataclass(frozen=True)
class StatementSet:
    company_id: str
    statements: Mapping[tuple[StatementKind, Scope, int], Statement] = field(default_factory=dict)

    def __post_init__(self):
        for triple, st in self.statements.items():
            if triple != st.triple:
                raise SchemaViolation(f"statement stored under {triple} but is {st.triple}")

    @classmethod
    def from_statements(cls, company_id: str, statements: Iterable[Statement]) -> StatementSet:
        table: dict[tuple[StatementKind, Scope, int], Statement] = {}
        for st in statements:
            if st.triple in table:
                kind, scope, year = st.triple
                raise SchemaViolation(f"duplicate statement ({kind.value}, {scope.value}, {year})")
            table[st.triple] = st
        return cls(company_id, table)

    def years(self) -> list[int]:
        return sorted({year for (_, _, year) in self.statements})

    def ordered(self) -> list[Statement]:
        """Statements in a stable order: year, scope, kind."""
        kinds = list(StatementKind)
        scopes = list(Scope)
        return sorted(
            self.statements.values(),
            key=lambda s: (s.fiscal_year, scopes.index(s.scope), kinds.index(s.kind)),
        )

    def scaled(self, factor: Decimal) -> StatementSet:
        """Copy with every monetary value multiplied by ``factor``."""
        out = []
        for st in self.ordered():
            items = [replace(i, value=DECIMAL_CONTEXT.multiply(i.value, factor)) for i in st.items]
            out.append(replace(st, items=tuple(items)))
        return StatementSet.from_statements(self.company_id, out)


# --- missing values -------------------------------------------------------


@dataclass(frozen=True)
class MissingItem:
    """Marker value: a requested line item is not present."""

    key: LineItemKey
    year: int
    scope: Scope

    def __str__(self) -> str:
        return f"missing {self.key.value} ({self.scope.value}, {self.year})"


def lookup(sset: StatementSet, key: LineItemKey, year: int, scope: Scope = Scope.CONSOLIDATED) -> Decimal | MissingItem:
    st = sset.statements.get((KEY_KIND[key], scope, year))
    if st is not None:
        value = st.get(key)
        if value is not None:
            return value
    return MissingItem(key, year, scope)


def average_balance(
    sset: StatementSet, key: LineItemKey, year: int, scope: Scope = Scope.CONSOLIDATED
) -> Decimal | MissingItem:
    """Mean of the prior-year-end and current-year-end balance."""
    prev = lookup(sset, key, year - 1, scope)
    if isinstance(prev, MissingItem):
        return prev
    cur = lookup(sset, key, year, scope)
    if isinstance(cur, MissingItem):
        return cur
    return average_of(prev, cur)


def average_of(a: Decimal, b: Decimal) -> Decimal:
    return DECIMAL_CONTEXT.divide(DECIMAL_CONTEXT.add(a, b), 2)


# --- alias resolution -----------------------------------------------------


def fold_label(label: str) -> str:
    return " ".join(label.split()).casefold()


@dataclass(frozen=True)
class AliasTable:
    """Raw label -> (key, tier).  Lookup is exact after whitespace/case folding."""

    entries: Mapping[str, tuple[LineItemKey, AliasTier]]

    def __post_init__(self):
        folded: dict[str, tuple[LineItemKey, AliasTier]] = {}
        for label, (key, tier) in self.entries.items():
            f = fold_label(label)
            if f in folded and folded[f][0] is not key:
                raise SchemaViolation(f"alias {label!r} maps to two keys")
            folded[f] = (LineItemKey(key), AliasTier(tier))
        object.__setattr__(self, "_folded", folded)
        explicit = {k for k, t in folded.values() if t is AliasTier.EXPLICIT}
        missing = [k.value for k in LineItemKey if k not in explicit]
        if missing:
            raise SchemaViolation(f"keys without an explicit alias: {missing}")

    def resolve(self, raw_label: str) -> tuple[LineItemKey, AliasTier] | None:
        return self._folded.get(fold_label(raw_label))

    def labels_for(self, key: LineItemKey, tier: AliasTier) -> list[str]:
        return [lab for lab, (k, t) in self.entries.items() if k is key and t is tier]

    def canonical_label(self, key: LineItemKey) -> str:
        return self.labels_for(key, AliasTier.EXPLICIT)[0]

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> AliasTable:
        try:
            entries = {
                label: (LineItemKey(spec["key"]), AliasTier(spec["tier"])) for label, spec in obj.items()
            }
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaViolation(f"bad alias table entry: {exc}") from exc
        return cls(entries)

    def to_json_obj(self) -> dict[str, dict[str, str]]:
        return {label: {"key": k.value, "tier": t.value} for label, (k, t) in self.entries.items()}


_DEFAULT_ALIASES: AliasTable | None = None


def default_alias_table() -> AliasTable:
    """The packaged alias table (English canonical labels plus A-share display labels)."""
    global _DEFAULT_ALIASES
    if _DEFAULT_ALIASES is None:
        text = resources.files("ccb").joinpath("data/aliases.json").read_text(encoding="utf-8")
        _DEFAULT_ALIASES = AliasTable.from_json_obj(json.loads(text))
    return _DEFAULT_ALIASES


def load_alias_table(path) -> AliasTable:
    with open(path, encoding="utf-8") as fh:
        return AliasTable.from_json_obj(json.load(fh))


class _Unresolved:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Unresolved"

    def __bool__(self) -> bool:
        return False


Unresolved = _Unresolved()


def resolve_label(raw_label: str, table: AliasTable) -> tuple[LineItemKey, AliasTier] | _Unresolved:
    hit = table.resolve(raw_label)
    return Unresolved if hit is None else hit


def resolve_statement_set(sset: StatementSet, table: AliasTable) -> StatementSet:
    """Attach canonical keys to every resolvable label.

    Items that already carry a key (e.g. stated in the file) keep it.
    Unresolvable labels stay unkeyed.  A second label resolving to a key that
    is already taken in the same statement is left unkeyed as well, so the
    first occurrence wins.
    """
    out = []
    for st in sset.ordered():
        taken: set[LineItemKey] = set()
        items = []
        for item in st.items:
            hit = (item.key, None) if item.key is not None else table.resolve(item.raw_label)
            key = None
            if hit is not None and hit[0] not in taken:
                key = hit[0]
                taken.add(key)
            items.append(replace(item, key=key))
        out.append(replace(st, items=tuple(items)))
    return StatementSet.from_statements(sset.company_id, out)


# --- statement files ------------------------------------------------------

_REQUIRED_STATEMENT_FIELDS = ("kind", "scope", "fiscal_year", "items")


def parse_statement_set(document: Mapping[str, Any] | str) -> StatementSet:
    """Build a :class:`StatementSet` from a statement-file object or its JSON text.

    Labels are carried raw; call :func:`resolve_statement_set` to key them.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"statement file is not JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise SchemaViolation("statement file must be a JSON object")
    for name in ("company_id", "statements"):
        if name not in document:
            raise SchemaViolation(f"missing required field {name!r}")
    if not isinstance(document["statements"], list):
        raise SchemaViolation("'statements' must be a list")

    statements = []
    for i, raw in enumerate(document["statements"]):
        if not isinstance(raw, Mapping):
            raise SchemaViolation(f"statements[{i}] is not an object")
        for name in _REQUIRED_STATEMENT_FIELDS:
            if name not in raw:
                raise SchemaViolation(f"statements[{i}] missing required field {name!r}")
        try:
            kind = StatementKind(raw["kind"])
            scope = Scope(raw["scope"])
        except ValueError as exc:
            raise SchemaViolation(f"statements[{i}]: {exc}") from exc
        year = raw["fiscal_year"]
        if isinstance(year, bool) or not isinstance(year, int):
            raise SchemaViolation(f"statements[{i}].fiscal_year must be an integer")
        items = []
        for j, it in enumerate(raw["items"]):
            if not isinstance(it, Mapping) or "label" not in it or "value" not in it:
                raise SchemaViolation(f"statements[{i}].items[{j}] needs label and value")
            value = it["value"]
            if not isinstance(value, str):
                raise SchemaViolation(f"statements[{i}].items[{j}].value must be a string decimal")
            try:
                parsed = parse_plain_decimal(value)
            except NumberFormat as exc:
                raise NumberFormat(f"statements[{i}].items[{j}]: {exc}") from None
            key = it.get("key")
            items.append(LineItem(str(it["label"]), parsed, year, LineItemKey(key) if key else None))
        statements.append(Statement(kind, scope, year, tuple(items), str(raw.get("currency_unit", "CNY"))))
    return StatementSet.from_statements(str(document["company_id"]), statements)


def statement_set_to_json_obj(sset: StatementSet, *, include_keys: bool = False) -> dict[str, Any]:
    statements = []
    for st in sset.ordered():
        items = []
        for item in st.items:
            entry: dict[str, Any] = {"label": item.raw_label, "value": plain_text(item.value)}
            if include_keys and item.key is not None:
                entry["key"] = item.key.value
            items.append(entry)
        statements.append(
            {
                "kind": st.kind.value,
                "scope": st.scope.value,
                "fiscal_year": st.fiscal_year,
                "currency_unit": st.currency_unit,
                "items": items,
            }
        )
    return {"company_id": sset.company_id, "statements": statements}


def load_statement_file(path, aliases: AliasTable | None = None) -> StatementSet:
    with open(path, encoding="utf-8") as fh:
        sset = parse_statement_set(fh.read())
    return resolve_statement_set(sset, aliases or default_alias_table())

"""Ground-truth oracle for the 14 benchmark indicators and their CCB tags.

Every indicator is evaluated in exact decimal arithmetic
(:data:`ccb.numtext.DECIMAL_CONTEXT`).  Percentages are fractions
(``0.10`` is 10%); turnover days are exact, unrounded days.

The operation order in :func:`compute_indicator` is the same as the DSL
formulas in :data:`INDICATORS`, so executing a manifest formula reproduces
the oracle bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

from .numtext import DECIMAL_CONTEXT
from .statements import (
    KEY_KIND,
    LineItemKey,
    MissingItem,
    Scope,
    StatementKind,
    StatementSet,
    average_of,
    lookup,
)

DAYS_IN_YEAR = Decimal(365)


class IndicatorId(str, Enum):
    ROE = "roe"
    ROA = "roa"
    GROSS_MARGIN = "gross_margin"
    NET_MARGIN = "net_margin"
    DEBT_RATIO = "debt_ratio"
    CURRENT_RATIO = "current_ratio"
    QUICK_RATIO = "quick_ratio"
    ASSET_TURNOVER = "asset_turnover"
    INVENTORY_DAYS = "inventory_days"
    AR_DAYS = "ar_days"
    REVENUE_GROWTH = "revenue_growth"
    NET_PROFIT_GROWTH = "net_profit_growth"
    OCF = "ocf"
    FCF = "fcf"


class Source(str, Enum):
    DIRECT = "direct"
    INTRA_TABLE = "intra_table"
    CROSS_TABLE = "cross_table"

    @property
    def label(self) -> str:
        return {"direct": "Direct", "intra_table": "Intra-table", "cross_table": "Cross-table"}[self.value]


class Difficulty(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    MULTI_STEP = "multi_step"
    AMBIGUOUS = "ambiguous"

    @property
    def label(self) -> str:
        return {
            "explicit": "Explicit",
            "implicit": "Implicit",
            "multi_step": "Multi-step",
            "ambiguous": "Ambiguous",
        }[self.value]


class Unit(str, Enum):
    PERCENTAGE = "percentage"
    RATIO = "ratio"
    DAYS = "days"
    CURRENCY = "currency"

    @property
    def label(self) -> str:
        return self.value.capitalize()


@dataclass(frozen=True)
class CCBTags:
    source: Source
    difficulty: Difficulty
    unit: Unit

    def classification_text(self) -> str:
        """``"Unit / Source / Difficulty"`` as printed in the indicator table."""
        return f"{self.unit.label} / {self.source.label} / {self.difficulty.label}"


@dataclass(frozen=True)
class RequiredInput:
    key: LineItemKey
    offset: int
    kind: StatementKind

    @property
    def var_name(self) -> str:
        return self.key.value if self.offset == 0 else f"{self.key.value}_prev"


@dataclass(frozen=True)
class IndicatorSpec:
    id: IndicatorId
    name: str
    formula: str
    source_statements: str
    dsl: str
    tags: CCBTags
    denominator: str | None


def _spec(id, name, formula, source_statements, dsl, source, difficulty, unit, denominator):
    return IndicatorSpec(id, name, formula, source_statements, dsl, CCBTags(source, difficulty, unit), denominator)


_I = IndicatorId
_S, _D, _U = Source, Difficulty, Unit

INDICATORS: dict[IndicatorId, IndicatorSpec] = {
    s.id: s
    for s in (
        _spec(_I.ROE, "Return on Equity (ROE)", "Net Inc. / Avg. Parent Eq.", "IS + BS",
              "net_income_parent / avg(parent_equity_prev, parent_equity)",
              _S.CROSS_TABLE, _D.AMBIGUOUS, _U.PERCENTAGE, "avg(parent_equity_prev, parent_equity)"),
        _spec(_I.ROA, "Return on Assets (ROA)", "Net Inc. / Avg. Tot. Assets", "IS + BS",
              "net_income / avg(total_assets_prev, total_assets)",
              _S.CROSS_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "avg(total_assets_prev, total_assets)"),
        _spec(_I.GROSS_MARGIN, "Gross Margin", "(Rev. - COGS) / Rev.", "IS Only",
              "(revenue - cogs) / revenue",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "revenue"),
        _spec(_I.NET_MARGIN, "Net Margin", "Net Inc. / Rev.", "IS Only",
              "net_income / revenue",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "revenue"),
        _spec(_I.DEBT_RATIO, "Debt Ratio", "Tot. Liab. / Tot. Assets", "BS Only",
              "total_liabilities / total_assets",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "total_assets"),
        _spec(_I.CURRENT_RATIO, "Current Ratio", "Cur. Assets / Cur. Liab.", "BS Only",
              "current_assets / current_liabilities",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.RATIO, "current_liabilities"),
        _spec(_I.QUICK_RATIO, "Quick Ratio", "(Cur. Assets - Inv.) / Cur. Liab.", "BS Only",
              "(current_assets - inventory) / current_liabilities",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.RATIO, "current_liabilities"),
        _spec(_I.ASSET_TURNOVER, "Asset Turnover", "Rev. / Avg. Tot. Assets", "IS + BS",
              "revenue / avg(total_assets_prev, total_assets)",
              _S.CROSS_TABLE, _D.IMPLICIT, _U.RATIO, "avg(total_assets_prev, total_assets)"),
        _spec(_I.INVENTORY_DAYS, "Inventory Turnover Days", "365 / (COGS / Avg. Inv.)", "IS + BS",
              "avg(inventory_prev, inventory) * DAYS / cogs",
              _S.CROSS_TABLE, _D.MULTI_STEP, _U.DAYS, "cogs"),
        _spec(_I.AR_DAYS, "Accounts Receivable Turnover Days", "365 / (Rev. / Avg. AR)", "IS + BS",
              "avg(accounts_receivable_prev, accounts_receivable) * DAYS / revenue",
              _S.CROSS_TABLE, _D.MULTI_STEP, _U.DAYS, "revenue"),
        _spec(_I.REVENUE_GROWTH, "Revenue Growth", "(Cur. Rev. - Prev. Rev.) / Prev. Rev.", "IS (Temp.)",
              "(revenue - revenue_prev) / revenue_prev",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "revenue_prev"),
        _spec(_I.NET_PROFIT_GROWTH, "Net Profit Growth", "(Cur. Inc. - Prev. Inc.) / Prev. Inc.", "IS (Temp.)",
              "(net_income - net_income_prev) / net_income_prev",
              _S.INTRA_TABLE, _D.IMPLICIT, _U.PERCENTAGE, "net_income_prev"),
        _spec(_I.OCF, "Operating Cash Flow (OCF)", "(Direct Extraction)", "CFS Only",
              "ocf",
              _S.DIRECT, _D.EXPLICIT, _U.CURRENCY, None),
        _spec(_I.FCF, "Free Cash Flow (FCF)", "OCF - CAPEX", "CFS Only",
              "ocf - capex",
              _S.INTRA_TABLE, _D.AMBIGUOUS, _U.CURRENCY, None),
    )
}


def classify(indicator: IndicatorId | str) -> CCBTags:
    return INDICATORS[IndicatorId(indicator)].tags


def _req(key: LineItemKey, offset: int = 0) -> RequiredInput:
    return RequiredInput(key, offset, KEY_KIND[key])


_K = LineItemKey

_REQUIRED: dict[IndicatorId, frozenset[RequiredInput]] = {
    _I.ROE: frozenset({_req(_K.NET_INCOME_PARENT), _req(_K.PARENT_EQUITY), _req(_K.PARENT_EQUITY, -1)}),
    _I.ROA: frozenset({_req(_K.NET_INCOME), _req(_K.TOTAL_ASSETS), _req(_K.TOTAL_ASSETS, -1)}),
    _I.GROSS_MARGIN: frozenset({_req(_K.REVENUE), _req(_K.COGS)}),
    _I.NET_MARGIN: frozenset({_req(_K.NET_INCOME), _req(_K.REVENUE)}),
    _I.DEBT_RATIO: frozenset({_req(_K.TOTAL_LIABILITIES), _req(_K.TOTAL_ASSETS)}),
    _I.CURRENT_RATIO: frozenset({_req(_K.CURRENT_ASSETS), _req(_K.CURRENT_LIABILITIES)}),
    _I.QUICK_RATIO: frozenset({_req(_K.CURRENT_ASSETS), _req(_K.INVENTORY), _req(_K.CURRENT_LIABILITIES)}),
    _I.ASSET_TURNOVER: frozenset({_req(_K.REVENUE), _req(_K.TOTAL_ASSETS), _req(_K.TOTAL_ASSETS, -1)}),
    _I.INVENTORY_DAYS: frozenset({_req(_K.COGS), _req(_K.INVENTORY), _req(_K.INVENTORY, -1)}),
    _I.AR_DAYS: frozenset({_req(_K.REVENUE), _req(_K.ACCOUNTS_RECEIVABLE), _req(_K.ACCOUNTS_RECEIVABLE, -1)}),
    _I.REVENUE_GROWTH: frozenset({_req(_K.REVENUE), _req(_K.REVENUE, -1)}),
    _I.NET_PROFIT_GROWTH: frozenset({_req(_K.NET_INCOME), _req(_K.NET_INCOME, -1)}),
    _I.OCF: frozenset({_req(_K.OCF)}),
    _I.FCF: frozenset({_req(_K.OCF), _req(_K.CAPEX)}),
}

#: Every key any indicator can consume (including the ROE fallback).
CONSUMED_KEYS: frozenset[LineItemKey] = frozenset(
    {r.key for reqs in _REQUIRED.values() for r in reqs} | {_K.NET_INCOME}
)


def required_inputs(indicator: IndicatorId | str) -> frozenset[RequiredInput]:
    return _REQUIRED[IndicatorId(indicator)]


@dataclass(frozen=True)
class IndicatorValue:
    value: Decimal
    unit: Unit
    year: int

    def __post_init__(self):
        if not self.value.is_finite():
            raise ValueError("indicator values are finite")


@dataclass(frozen=True)
class Undefined:
    """Marker value: the formula's denominator is exactly zero."""

    indicator: IndicatorId
    denominator: str

    def __str__(self) -> str:
        return f"undefined ({self.denominator} is zero)"


def _fetch(sset, key, year, scope):
    # ROE's numerator prefers the parent-attributable line
    if key is _K.NET_INCOME_PARENT:
        v = lookup(sset, key, year, scope)
        if isinstance(v, MissingItem):
            fallback = lookup(sset, _K.NET_INCOME, year, scope)
            return v if isinstance(fallback, MissingItem) else fallback
        return v
    return lookup(sset, key, year, scope)


def extract_inputs(
    indicator: IndicatorId | str, sset: StatementSet, year: int, scope: Scope = Scope.CONSOLIDATED
) -> dict[str, Decimal] | MissingItem:
    """Variables for the indicator's DSL formula, named by :attr:`RequiredInput.var_name`."""
    env: dict[str, Decimal] = {}
    for req in sorted(required_inputs(indicator), key=lambda r: (r.var_name)):
        v = _fetch(sset, req.key, year + req.offset, scope)
        if isinstance(v, MissingItem):
            return v
        env[req.var_name] = v
    return env


def compute_indicator(
    indicator: IndicatorId | str, sset: StatementSet, year: int, scope: Scope = Scope.CONSOLIDATED
) -> IndicatorValue | MissingItem | Undefined:
    ind = IndicatorId(indicator)
    env = extract_inputs(ind, sset, year, scope)
    if isinstance(env, MissingItem):
        return env
    ctx = DECIMAL_CONTEXT
    v = env.get

    def div(num: Decimal, den: Decimal) -> Decimal | Undefined:
        if den.is_zero():
            return Undefined(ind, INDICATORS[ind].denominator or "denominator")
        return ctx.divide(num, den)

    if ind is _I.ROE:
        out = div(v("net_income_parent"), average_of(v("parent_equity_prev"), v("parent_equity")))
    elif ind is _I.ROA:
        out = div(v("net_income"), average_of(v("total_assets_prev"), v("total_assets")))
    elif ind is _I.GROSS_MARGIN:
        out = div(ctx.subtract(v("revenue"), v("cogs")), v("revenue"))
    elif ind is _I.NET_MARGIN:
        out = div(v("net_income"), v("revenue"))
    elif ind is _I.DEBT_RATIO:
        out = div(v("total_liabilities"), v("total_assets"))
    elif ind is _I.CURRENT_RATIO:
        out = div(v("current_assets"), v("current_liabilities"))
    elif ind is _I.QUICK_RATIO:
        out = div(ctx.subtract(v("current_assets"), v("inventory")), v("current_liabilities"))
    elif ind is _I.ASSET_TURNOVER:
        out = div(v("revenue"), average_of(v("total_assets_prev"), v("total_assets")))
    elif ind is _I.INVENTORY_DAYS:
        avg = average_of(v("inventory_prev"), v("inventory"))
        out = div(ctx.multiply(avg, DAYS_IN_YEAR), v("cogs"))
    elif ind is _I.AR_DAYS:
        avg = average_of(v("accounts_receivable_prev"), v("accounts_receivable"))
        out = div(ctx.multiply(avg, DAYS_IN_YEAR), v("revenue"))
    elif ind is _I.REVENUE_GROWTH:
        out = div(ctx.subtract(v("revenue"), v("revenue_prev")), v("revenue_prev"))
    elif ind is _I.NET_PROFIT_GROWTH:
        out = div(ctx.subtract(v("net_income"), v("net_income_prev")), v("net_income_prev"))
    elif ind is _I.OCF:
        out = v("ocf")
    elif ind is _I.FCF:
        out = ctx.subtract(v("ocf"), v("capex"))
    else:  # pragma: no cover - enum is closed
        raise AssertionError(ind)

    if isinstance(out, Undefined):
        return out
    return IndicatorValue(out, INDICATORS[ind].tags.unit, year)


def format_value(value: IndicatorValue) -> str:
    """Presentation rendering; the only place percentages become ``x%``."""
    q = value.value
    if value.unit is Unit.PERCENTAGE:
        return f"{DECIMAL_CONTEXT.multiply(q, 100).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"
    if value.unit is Unit.RATIO:
        return str(q.quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP))
    if value.unit is Unit.DAYS:
        return f"{q.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)} days"
    return format(q.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP), ",f")


def indicator_manifest() -> dict:
    """JSON-ready description of all indicators: formulas, DSL text, tags, inputs."""
    out = {}
    for ind, spec in INDICATORS.items():
        out[ind.value] = {
            "name": spec.name,
            "formula": spec.formula,
            "source_statements": spec.source_statements,
            "dsl": spec.dsl,
            "classification": spec.tags.classification_text(),
            "tags": {
                "source": spec.tags.source.value,
                "difficulty": spec.tags.difficulty.value,
                "unit": spec.tags.unit.value,
            },
            "inputs": sorted(
                [{"key": r.key.value, "offset": r.offset, "statement": r.kind.abbrev} for r in required_inputs(ind)],
                key=lambda d: (d["key"], d["offset"]),
            ),
        }
    return out

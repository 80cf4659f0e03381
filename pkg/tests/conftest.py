from __future__ import annotations

import json
from decimal import Decimal
from pathlib import Path

import pytest

from ccb.statements import LineItem, LineItemKey, Scope, Statement, StatementKind, StatementSet

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    label = dict(report.user_properties).get("criterion")
    if label:
        _criteria.setdefault(label, []).append(report.outcome)


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker:
        record_property("criterion", marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(s.split()[0][2:])):
        outcomes = _criteria[label]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {label}")


def _bs(year, **values):
    return _statement(StatementKind.BALANCE_SHEET, year, values)


def _statement(kind, year, values, scope=Scope.CONSOLIDATED):
    items = tuple(LineItem(k, Decimal(v), year, LineItemKey(k)) for k, v in values.items())
    return Statement(kind, scope, year, items)


@pytest.fixture
def roe_set() -> StatementSet:
    """Net income 12, parent equity 100 then 140: ROE is exactly 10%."""
    return StatementSet.from_statements(
        "FX",
        [
            _bs(2022, parent_equity="100", total_assets="200", total_liabilities="100"),
            _bs(2023, parent_equity="140", total_assets="300", total_liabilities="160"),
            _statement(StatementKind.INCOME_STATEMENT, 2023, {"net_income": "12", "revenue": "120", "cogs": "60"}),
        ],
    )


@pytest.fixture
def golden_instance_path() -> Path:
    return FIXTURES / "golden_instance.json"


@pytest.fixture
def golden_transcript_path() -> Path:
    return FIXTURES / "golden_transcript.json"


@pytest.fixture(scope="session")
def reference_column() -> dict:
    return json.loads((FIXTURES / "reference_column.json").read_text(encoding="utf-8"))

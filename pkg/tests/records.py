"""Synthetic evaluation records with prescribed per-cell correctness."""

from __future__ import annotations

from decimal import Decimal

from ccb.harness import EvaluationRecord
from ccb.indicators import INDICATORS, IndicatorId, IndicatorValue
from ccb.potloop.loop import Answer, NoAnswer, Paradigm


def make_records(counts, total: int, model: str = "m", year: int = 2023) -> list[EvaluationRecord]:
    """``counts[(indicator, paradigm)] = k`` -> ``total`` records, the first ``k`` correct."""
    out = []
    for (ind, paradigm), k in counts.items():
        ind, paradigm = IndicatorId(ind), Paradigm(paradigm)
        truth = IndicatorValue(Decimal("0.5"), INDICATORS[ind].tags.unit, year)
        for n in range(total):
            ok = n < k
            out.append(
                EvaluationRecord(
                    f"R{n:03d}/{year}/{ind.value}",
                    paradigm,
                    model,
                    ind,
                    Answer(truth.value, "native") if ok else NoAnswer,
                    truth,
                    ok,
                )
            )
    return out


def column_counts(table: dict) -> tuple[dict, int]:
    """Per-indicator correct counts that reproduce a published accuracy column."""
    total = table["reports_per_indicator"]
    counts = {}
    for ind, row in table["by_indicator"].items():
        for paradigm, shown in row.items():
            counts[(ind, paradigm)] = int((Decimal(shown) * total / 100).to_integral_value())
    return counts, total

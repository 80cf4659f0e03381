from __future__ import annotations

import json
import random
from decimal import Context, Decimal, localcontext

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccb.benchgen import generate_benchmark
from ccb.errors import BackendError, EmptyInput
from ccb.harness import (
    DIMENSIONS,
    TOTAL_AVERAGE,
    EvaluationRecord,
    EvaluationRun,
    MatchPolicy,
    bucket_of,
    emit_curve,
    emit_report,
    evaluate,
    match_answer,
    one_decimal,
    render_markdown,
    stratify,
)
from ccb.indicators import IndicatorId, IndicatorValue, Unit
from ccb.potloop.backends import DecodingParams, ScriptedBackend
from ccb.potloop.loop import Answer, NoAnswer, Paradigm
from ccb.potloop.simulated import SimulatedAnalyst

from records import make_records, column_counts


def iv(value, unit):
    return IndicatorValue(Decimal(value), unit, 2023)


PCT = Unit.PERCENTAGE


@pytest.mark.parametrize(
    "predicted, truth, expected",
    [
        ("10%", iv("0.10", PCT), True),
        (Decimal("0.10"), iv("0.10", PCT), True),
        ("10", iv("0.10", PCT), True),
        ("120%", iv("1.2", PCT), True),
        (Decimal("1.2"), iv("1.2", PCT), True),
        ("100.04 days", iv("100", Unit.DAYS), True),
        ("100.2 days", iv("100", Unit.DAYS), False),
        (Decimal("1.0009"), iv("1", Unit.RATIO), True),
        (Decimal("1.0011"), iv("1", Unit.RATIO), False),
        ("1,234,567.89 yuan", iv("1234567.89", Unit.CURRENCY), True),
        ("1.2 billion RMB", iv("1200000000", Unit.CURRENCY), True),
        ("1.21 billion RMB", iv("1200000000", Unit.CURRENCY), False),
        ("12.3亿", iv("1230000000", Unit.CURRENCY), True),
        (NoAnswer, iv("0", Unit.CURRENCY), False),
        ("n/a", iv("0.1", PCT), False),
        (Decimal("0"), iv("0", Unit.RATIO), True),
    ],
)
def test_match_table(predicted, truth, expected):
    assert match_answer(predicted, truth) is expected


def test_native_values_skip_percent_rescaling():
    assert match_answer(Answer(Decimal("2.5"), "native"), iv("2.5", PCT))
    assert not match_answer(Answer(Decimal("2.5"), ""), iv("2.5", PCT))


def test_policy_validation():
    with pytest.raises(ValueError):
        MatchPolicy(tolerances={Unit.RATIO: Decimal("0.1")})
    with pytest.raises(ValueError):
        MatchPolicy(tolerances={u: Decimal(1) for u in Unit})
    loose = MatchPolicy(tolerances={u: Decimal("0.01") for u in Unit})
    assert match_answer("100.9 days", iv("100", Unit.DAYS), loose)


@settings(max_examples=200)
@given(
    cents=st.integers(-(10**12), 10**12),
    unit=st.sampled_from([Unit.PERCENTAGE, Unit.RATIO]),
    noise=st.integers(-3000, 3000),
)
def test_representations_agree(cents, unit, noise):
    truth = iv(Decimal(cents).scaleb(-4), unit)
    guess = Decimal(cents + noise).scaleb(-4)
    as_fraction = match_answer(Answer(guess, "native"), truth)
    if unit is Unit.PERCENTAGE:
        pct = guess * 100
        assert match_answer(f"{pct}%", truth) == as_fraction
        assert match_answer(f"{pct:,f} %", truth) == as_fraction


def test_no_answer_cannot_be_correct():
    with pytest.raises(ValueError):
        EvaluationRecord("q", Paradigm.POT, "m", IndicatorId.ROE, NoAnswer, iv("0.1", PCT), True)


# --- stratification -------------------------------------------------------


def _random_records(rng, n=200):
    counts = {}
    for ind in IndicatorId:
        for p in Paradigm:
            counts[(ind, p)] = rng.randint(0, 7)
    return make_records(counts, 7)


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_conservation_and_permutation(rng):
    records = _random_records(rng)
    report = stratify(records)
    for dim, cells in report.tables.items():
        assert sum(c.total for c in cells.values()) == len(records)
        assert sum(c.correct for c in cells.values()) == sum(r.correct for r in records)
    shuffled = list(records)
    rng.shuffle(shuffled)
    assert stratify(shuffled).to_json_obj() == report.to_json_obj()


def test_all_correct_is_100():
    report = stratify(make_records({(i, p): 5 for i in IndicatorId for p in Paradigm}, 5))
    for dim in DIMENSIONS:
        for row in report.rows(dim):
            for p in Paradigm:
                assert report.cell(dim, row, p) == "100.0"


def test_total_average_of_constants():
    report = stratify(make_records({(i, "cot"): 3 for i in IndicatorId}, 8))
    assert report.accuracy("indicator", TOTAL_AVERAGE, "cot") == Decimal("37.5")


def test_total_average_is_unweighted_mean():
    counts = {(i, "pot"): n % 5 for n, i in enumerate(IndicatorId)}
    report = stratify(make_records(counts, 4))
    with localcontext(Context(prec=34)):
        expected = sum(Decimal(k) * 100 / 4 for k in counts.values()) / 14
    assert report.accuracy("indicator", TOTAL_AVERAGE, "pot") == expected


def test_cross_table_cell():
    # 44 of 103 cross-table PoT records correct is 42.7%
    records = make_records({("roe", "pot"): 44}, 103)
    assert stratify(records).cell("source", "Cross-table Calc", "pot") == "42.7"


def test_empty_input():
    with pytest.raises(EmptyInput):
        stratify([])


def test_bucket_membership():
    assert bucket_of("source", IndicatorId.ROE) == "Cross-table Calc"
    assert bucket_of("difficulty", IndicatorId.FCF) == "Ambiguous Keys"
    assert bucket_of("difficulty", IndicatorId.INVENTORY_DAYS) == "Implicit Calc"
    assert bucket_of("difficulty", IndicatorId.ROA) == "Implicit Calc"
    assert bucket_of("unit", IndicatorId.INVENTORY_DAYS) == "Days"
    assert one_decimal(Decimal("42.65")) == "42.7"


def test_reference_column_tables(reference_column):
    counts, total = column_counts(reference_column)
    report = stratify(make_records(counts, total))
    for dim, key in (("source", "by_source"), ("unit", "by_unit")):
        for row, cols in reference_column[key].items():
            for p, shown in cols.items():
                assert report.cell(dim, row, p) == shown, (row, p)
    for p, shown in reference_column["total_average"].items():
        assert report.cell("indicator", TOTAL_AVERAGE, p) == shown
    md = render_markdown(report)
    assert "Table 1: Results By Source (Calc Path)" in md
    assert "| Direct Extraction | Direct | 89.5 |" in md
    assert "| Cross-table Calc | Direct | 6.9 |" in md


def test_curve_order():
    report = stratify(make_records({(i, "cot"): 1 for i in IndicatorId}, 2))
    series = emit_curve(report)[("cot", "m")]
    assert [row for row, _ in series] == ["Direct Extraction", "Intra-table Calc", "Cross-table Calc"]


def test_emit_report(tmp_path):
    records = _random_records(random.Random(3))
    report = stratify(records)
    paths = emit_report(report, tmp_path / "a", records=records)
    assert sorted(p.name for p in paths) == ["curve.csv", "report.json", "report.md", "tables.csv"]
    again = emit_report(stratify(records), tmp_path / "b", records=records)
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()
    assert emit_report(report, tmp_path / "c", formats=()) == []
    assert not (tmp_path / "c").exists()
    with pytest.raises(ValueError):
        emit_report(report, tmp_path / "d", formats=("xml",))
    assert json.loads((tmp_path / "a" / "report.json").read_text())["report"]["models"] == ["m"]


# --- evaluate -------------------------------------------------------------


@pytest.fixture(scope="module")
def instance():
    return generate_benchmark(5, 1)


def test_evaluate_counts_and_perfect_pot(instance):
    run = evaluate(instance, [SimulatedAnalyst.perfect()], ["direct", "cot", "pot"])
    assert len(run.records) == 42
    assert all(r.correct for r in run.records)
    pot = [r for r in run.records if r.paradigm is Paradigm.POT]
    assert all(r.trace["terminal"] == "success" for r in pot)
    assert run.metadata["instance_hash"] == instance.content_hash()


def test_evaluate_multiple_backends(instance):
    run = evaluate(instance, [SimulatedAnalyst.perfect(), SimulatedAnalyst(seed=1)], ["cot"])
    assert len(run.records) == 28
    assert stratify(run.records).models == sorted(b for b in run.metadata["models"])


def test_transcript_miss_is_flagged(instance):
    seen = []

    class Recorder(SimulatedAnalyst):
        def complete(self, prompt, params=DecodingParams()):
            seen.append(prompt)
            return super().complete(prompt, params)

    evaluate(instance, [Recorder(identity="perfect", cot_error_rate=0, direct_error_rate=0)], ["direct"])
    replies = {p: SimulatedAnalyst.perfect().complete(p) for p in seen[1:]}
    run = evaluate(instance, [ScriptedBackend.from_pairs(replies.items())], ["direct"])
    assert len(run.records) == 14
    miss = run.records[0]
    assert miss.predicted is NoAnswer and miss.failure == "transcript miss"
    assert all(r.correct for r in run.records[1:])
    assert [m["query_id"] for m in run.metadata["transcript_misses"]] == [miss.query_id]


def test_backend_error_aborts_only_that_backend(instance):
    class DiesAfter:
        identity = "flaky"

        def __init__(self):
            self.calls = 0

        def complete(self, prompt, params=DecodingParams()):
            self.calls += 1
            if self.calls > 3:
                raise BackendError("503 from endpoint")
            return SimulatedAnalyst.perfect().complete(prompt)

    run = evaluate(instance, [DiesAfter(), SimulatedAnalyst.perfect()], ["direct"])
    assert len(run.records) == 28
    flaky = [r for r in run.records if r.model == "flaky"]
    assert sum(r.correct for r in flaky) == 3
    assert run.metadata["aborted"] == {"flaky": "503 from endpoint"}
    assert all(r.correct for r in run.records if r.model == "perfect")


def test_parallel_evaluation_matches_serial(instance):
    serial = evaluate(instance, [SimulatedAnalyst(seed=4)], ["cot", "pot"])
    parallel = evaluate(instance, [SimulatedAnalyst(seed=4)], ["cot", "pot"], jobs=4)
    assert serial.to_bytes() == parallel.to_bytes()


def test_run_round_trip(instance, tmp_path):
    run = evaluate(instance, [SimulatedAnalyst(seed=2)], ["cot"])
    path = tmp_path / "r.json"
    path.write_bytes(run.to_bytes())
    assert EvaluationRun.load(path).to_bytes() == run.to_bytes()


def test_reference_difficulty_column_files_quick_ratio_as_ambiguous(reference_column):
    # The taxonomy tags Quick Ratio as Implicit, but the published difficulty
    # table only adds up when Quick Ratio sits in the Ambiguous bucket.
    counts, total = column_counts(reference_column)
    records = make_records(counts, total)
    by_tags = stratify(records)
    published = reference_column["by_difficulty"]
    assert by_tags.cell("difficulty", "Explicit Keys", "pot") == published["Explicit Keys"]["pot"]
    assert by_tags.cell("difficulty", "Ambiguous Keys", "pot") != published["Ambiguous Keys"]["pot"]

    agg = {}
    for r in records:
        row = bucket_of("difficulty", r.indicator)
        if r.indicator is IndicatorId.QUICK_RATIO:
            row = "Ambiguous Keys"
        cell = agg.setdefault((row, r.paradigm.value), [0, 0])
        cell[0] += r.correct
        cell[1] += 1
    for row, cols in published.items():
        for p, shown in cols.items():
            c, n = agg[(row, p)]
            assert one_decimal(Decimal(c * 100) / n) == shown

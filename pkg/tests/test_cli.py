from __future__ import annotations

import hashlib
import json

import pytest

from ccb.cli import main
from ccb.harness import EvaluationRun
from ccb.statements import statement_set_to_json_obj


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_prints_hash_and_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    code, out, _ = run(["gen", "--seed", 42, "--companies", 19, "--years", "2019:2023", "-o", a], capsys)
    assert code == 0
    assert out.split()[0] == sha(a) and "(266 queries)" in out
    run(["gen", "--seed", 42, "--companies", 19, "--years", "2019:2023", "-o", b], capsys)
    assert sha(a) == sha(b)
    assert len(json.loads(a.read_text())["queries"]) == 266


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "-o", "x.json"],
        ["gen", "--seed", "1", "--years", "2023:2023", "-o", "x.json"],
        ["gen", "--seed", "1", "--profile", "weird", "-o", "x.json"],
        ["gen", "--seed", "1", "--companies", "0", "-o", "x.json"],
        ["run", "i.json", "--paradigm", "magic", "-o", "r.json"],
        ["run", "i.json", "--max-depth", "11", "-o", "r.json"],
        ["score", "r.json", "-o", "out", "--format", "xml"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_missing_input_exits_1(tmp_path, capsys):
    code, _, err = run(["score", tmp_path / "nope.json", "-o", tmp_path / "out"], capsys)
    assert code == 1 and err.startswith("error:")
    code, _, _ = run(["run", tmp_path / "nope.json", "--simulate", "perfect", "-o", tmp_path / "r.json"], capsys)
    assert code == 1


def test_run_with_transcript_and_score(tmp_path, capsys, golden_instance_path, golden_transcript_path):
    records = tmp_path / "records.json"
    code, out, _ = run(
        ["run", golden_instance_path, "--paradigm", "pot", "--transcript", golden_transcript_path, "-o", records], capsys
    )
    assert code == 0 and "(14 records)" in out
    loaded = EvaluationRun.load(records)
    assert all(r.correct for r in loaded.records)
    manifest = json.loads((tmp_path / "records.json.manifest.json").read_text())
    assert manifest["records_hash"] == sha(records)
    assert manifest["backends"] == ["scripted"]
    assert {"started", "finished", "tool_version", "instance_hash", "config"} <= set(manifest)

    code, _, _ = run(
        ["run", golden_instance_path, "--paradigm", "direct,cot,pot", "--transcript", golden_transcript_path, "-o", tmp_path / "all.json"],
        capsys,
    )
    assert code == 0 and len(EvaluationRun.load(tmp_path / "all.json").records) == 42

    code, out, _ = run(["score", records, "-o", tmp_path / "out"], capsys)
    assert code == 0
    md = (tmp_path / "out" / "report.md").read_text()
    for title in ("Results By Source", "Results By Difficulty", "Results By Unit", "Results for Detailed Indicators"):
        assert title in md
    assert {p.name for p in (tmp_path / "out").iterdir()} == {"report.md", "report.json", "tables.csv", "curve.csv"}

    code, out, _ = run(["report", records], capsys)
    assert code == 0 and out == md


def test_score_format_subset(tmp_path, capsys, golden_instance_path, golden_transcript_path):
    records = tmp_path / "r.json"
    run(["run", golden_instance_path, "--transcript", golden_transcript_path, "-o", records], capsys)
    code, _, _ = run(["score", records, "-o", tmp_path / "out", "--format", "csv"], capsys)
    assert code == 0
    assert {p.name for p in (tmp_path / "out").iterdir()} == {"tables.csv", "curve.csv"}


def test_record_then_replay(tmp_path, capsys):
    inst = tmp_path / "i.json"
    run(["gen", "--seed", 3, "-o", inst], capsys)
    code, _, _ = run(
        ["run", inst, "--paradigm", "cot,pot", "--simulate", "hallucinating", "--code-fault-rate", "0.5",
         "--record", tmp_path / "t.json", "-o", tmp_path / "live.json"],
        capsys,
    )
    assert code == 0
    code, _, err = run(["run", inst, "--paradigm", "cot,pot", "--transcript", tmp_path / "t.json", "-o", tmp_path / "replay.json"], capsys)
    assert code == 0 and "warning" not in err
    live = EvaluationRun.load(tmp_path / "live.json").records
    replay = EvaluationRun.load(tmp_path / "replay.json").records
    strip = lambda r: {**r.to_json_obj(), "model": None}
    assert [strip(r) for r in live] == [strip(r) for r in replay]


def test_unreachable_endpoint_keeps_partial_records(tmp_path, capsys, monkeypatch, golden_instance_path):
    monkeypatch.setenv("CCB_LLM_ENDPOINT", "http://127.0.0.1:9/v1")
    monkeypatch.setenv("CCB_LLM_MODEL", "nobody")
    out = tmp_path / "r.json"
    code, _, err = run(["run", golden_instance_path, "--timeout", "2", "-o", out], capsys)
    assert code == 1 and "aborted" in err
    records = EvaluationRun.load(out).records
    assert len(records) == 14 and not any(r.correct for r in records)


def test_no_backend_configured(tmp_path, capsys, monkeypatch, golden_instance_path):
    monkeypatch.delenv("CCB_LLM_ENDPOINT", raising=False)
    code, _, err = run(["run", golden_instance_path, "-o", tmp_path / "r.json"], capsys)
    assert code == 1 and "CCB_LLM_ENDPOINT" in err


def _write_set(tmp_path, sset):
    path = tmp_path / "statements.json"
    path.write_text(json.dumps(statement_set_to_json_obj(sset, include_keys=True)))
    return path


def test_oracle(tmp_path, capsys, roe_set):
    path = _write_set(tmp_path, roe_set)
    assert run(["oracle", path, "--year", 2023, "--indicator", "roe"], capsys) == (0, "10.0%\n", "")
    code, out, _ = run(["oracle", path, "--year", 2023, "--indicator", "roe", "--indicator", "gross_margin"], capsys)
    assert out == "roe\t10.0%\ngross_margin\t50.0%\n"
    # the fixture lacks cash-flow items, so the full listing reports them missing
    code, out, _ = run(["oracle", path], capsys)
    assert code == 1 and len(out.splitlines()) == 14


def test_oracle_identity_ratio(tmp_path, capsys):
    from decimal import Decimal

    from ccb.statements import LineItem, LineItemKey, Scope, Statement, StatementKind, StatementSet

    bs = lambda y: Statement(
        StatementKind.BALANCE_SHEET,
        Scope.CONSOLIDATED,
        y,
        (LineItem("Total Assets", Decimal(500), y, LineItemKey.TOTAL_ASSETS),
         LineItem("Total Liabilities", Decimal(500), y, LineItemKey.TOTAL_LIABILITIES)),
    )
    path = _write_set(tmp_path, StatementSet.from_statements("TL", [bs(2022), bs(2023)]))
    assert run(["oracle", path, "--year", 2023, "--indicator", "debt_ratio"], capsys) == (0, "100.0%\n", "")


def test_oracle_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(["oracle", bad], capsys)[0] == 1

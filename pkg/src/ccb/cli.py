"""``ccb`` command line: gen, run, score, report, oracle.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .benchgen import PROFILES, BenchmarkInstance, generate_benchmark, get_profile
from .errors import CCBError
from .harness import REPORT_FILES, EvaluationRun, MatchPolicy, emit_report, evaluate, render_markdown, stratify
from .indicators import INDICATORS, IndicatorId, IndicatorValue, compute_indicator, format_value
from .potloop.backends import DecodingParams, RecordingBackend, RemoteBackend, ScriptedBackend
from .potloop.loop import LoopConfig, Paradigm
from .potloop.simulated import SimulatedAnalyst
from .statements import Scope, load_statement_file

logger = logging.getLogger("ccb")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path, data: bytes) -> str:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_bytes(data)
    return _sha256(data)


def _years(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        first, last = int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected FIRST:LAST years, got {text!r}") from None
    if last - first < 1:
        raise argparse.ArgumentTypeError("need at least two consecutive years")
    return first, last


def _paradigms(text: str) -> list[Paradigm]:
    try:
        return [Paradigm(p.strip().lower()) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _formats(text: str) -> list[str]:
    out = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in out if f not in REPORT_FILES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s): {', '.join(bad)}")
    return out


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- commands -------------------------------------------------------------


def cmd_gen(args) -> int:
    profile = get_profile(args.profile, args.profile_seed)
    instance = generate_benchmark(args.seed, args.companies, args.years, profile, loss_rate=args.loss_rate)
    digest = instance.save(args.output)
    print(f"{digest}  {args.output}  ({len(instance.queries)} queries)")
    return 0


def _backends(args) -> list:
    backends = []
    for path in args.transcript or []:
        backends.append(ScriptedBackend.from_file(path))
    if args.simulate == "perfect":
        backends.append(SimulatedAnalyst.perfect(seed=args.sim_seed))
    elif args.simulate == "hallucinating":
        backends.append(
            SimulatedAnalyst(
                cot_error_rate=args.error_rate,
                direct_error_rate=args.direct_error_rate,
                code_fault_rate=args.code_fault_rate,
                seed=args.sim_seed,
            )
        )
    if not backends:
        backends.append(RemoteBackend.from_env(timeout=args.timeout))
    return backends


def cmd_run(args) -> int:
    started = _now()
    instance = BenchmarkInstance.load(args.instance)
    backends = _backends(args)
    recorders = [RecordingBackend(b) for b in backends] if args.record else backends
    cfg = LoopConfig(
        max_depth=args.max_depth,
        decoding=DecodingParams(temperature=args.temperature),
        phase1_reask=args.phase1_reask,
    )
    run = evaluate(instance, recorders, args.paradigm, cfg, MatchPolicy(), jobs=args.jobs)
    digest = _write(args.output, run.to_bytes())
    print(f"{digest}  {args.output}  ({len(run.records)} records)")

    if args.record:
        entries = []
        for r in recorders:
            entries.extend(r.transcript())
        entries = sorted({e["prompt_key"]: e for e in entries}.values(), key=lambda e: e["prompt_key"])
        data = (json.dumps(entries, ensure_ascii=False, indent=1, sort_keys=True) + "\n").encode("utf-8")
        print(f"{_write(args.record, data)}  {args.record}  ({len(entries)} transcript entries)")

    manifest = {
        "command": sys.argv[:1] and ["ccb", *sys.argv[1:]],
        "tool_version": __version__,
        "instance": str(args.instance),
        "instance_hash": run.metadata["instance_hash"],
        "seeds": {"instance": instance.manifest.get("seed"), "simulator": args.sim_seed},
        "backends": [b.identity for b in backends],
        "config": run.metadata["config"],
        "paradigms": run.metadata["paradigms"],
        "records_hash": digest,
        "started": started,
        "finished": _now(),
    }
    _write(str(args.output) + ".manifest.json", (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    if run.metadata["aborted"]:
        for model, reason in run.metadata["aborted"].items():
            print(f"error: backend {model} aborted: {reason}", file=sys.stderr)
        return 1
    misses = run.metadata["transcript_misses"]
    if misses:
        print(f"warning: {len(misses)} prompt(s) had no transcript entry", file=sys.stderr)
    return 0


def _load_records(paths):
    records, metadata = [], {}
    for p in paths:
        run = EvaluationRun.load(p)
        records.extend(run.records)
        metadata = metadata or run.metadata
    return records, metadata


def cmd_score(args) -> int:
    records, metadata = _load_records(args.records)
    report = stratify(records, metadata)
    for path in emit_report(report, args.output, args.format, records=records):
        print(f"{_sha256(path.read_bytes())}  {path}")
    return 0


def cmd_report(args) -> int:
    records, metadata = _load_records(args.records)
    sys.stdout.write(render_markdown(stratify(records, metadata)))
    return 0


def cmd_oracle(args) -> int:
    sset = load_statement_file(args.statements)
    year = args.year or max(sset.years())
    indicators = args.indicator or list(INDICATORS)
    status = 0
    for ind in indicators:
        value = compute_indicator(ind, sset, year, args.scope)
        text = format_value(value) if isinstance(value, IndicatorValue) else str(value)
        if not isinstance(value, IndicatorValue):
            status = 1
        print(text if len(indicators) == 1 else f"{ind.value}\t{text}")
    return status


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccb", description="Financial indicator benchmark and program-of-thought runner")
    parser.add_argument("--version", action="version", version=f"ccb {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic benchmark instance")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--companies", type=int, default=1)
    g.add_argument("--years", type=_years, default=(2022, 2023), help="FIRST:LAST, inclusive")
    g.add_argument("--profile", choices=sorted(PROFILES), default="standard")
    g.add_argument("--profile-seed", type=int, default=None, help="override the rendering-noise seed")
    g.add_argument("--loss-rate", type=float, default=0.1)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run paradigms over an instance")
    r.add_argument("instance")
    r.add_argument("--paradigm", type=_paradigms, default=[Paradigm.POT], help="comma list of direct,cot,pot")
    r.add_argument("--transcript", action="append", help="replay a recorded transcript (repeatable)")
    r.add_argument("--simulate", choices=("perfect", "hallucinating"), default=None)
    r.add_argument("--error-rate", type=float, default=0.15, help="per-operation slip rate in CoT replies")
    r.add_argument("--direct-error-rate", type=float, default=0.3)
    r.add_argument("--code-fault-rate", type=float, default=0.0)
    r.add_argument("--sim-seed", type=int, default=0)
    r.add_argument("--record", default=None, help="write a replayable transcript here")
    r.add_argument("--max-depth", type=int, default=3)
    r.add_argument("--temperature", type=float, default=0.0)
    r.add_argument("--phase1-reask", action="store_true")
    r.add_argument("--timeout", type=float, default=120.0)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="write stratified report files")
    s.add_argument("records", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--format", type=_formats, default=list(REPORT_FILES))
    s.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="print the markdown tables")
    p.add_argument("records", nargs="+")
    p.set_defaults(func=cmd_report)

    o = sub.add_parser("oracle", help="compute indicators for a statement file")
    o.add_argument("statements")
    o.add_argument("--year", type=int, default=None)
    o.add_argument("--scope", type=Scope, default=Scope.CONSOLIDATED)
    o.add_argument("--indicator", type=IndicatorId, action="append")
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if getattr(args, "max_depth", 3) and not 1 <= getattr(args, "max_depth", 3) <= 10:
        parser.error("--max-depth must lie in 1..10")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    if args.command == "gen" and args.companies < 1:
        parser.error("--companies must be >= 1")
    try:
        return args.func(args)
    except (CCBError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

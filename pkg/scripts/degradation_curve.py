"""Accuracy by calculation path as the per-operation slip rate grows.

Runs the simulated analyst (exact retrieval, noisy prose arithmetic) over a
seeded synthetic benchmark under CoT and PoT and prints one row per
(rate, paradigm).  Optionally writes the rows as CSV.

    python3 scripts/degradation_curve.py --companies 50 --rates 0,0.05,0.15,0.3 --csv curve.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time

from ccb.benchgen import generate_benchmark
from ccb.harness import CURVE_ORDER, emit_curve, evaluate, one_decimal, stratify
from ccb.potloop.simulated import SimulatedAnalyst

logger = logging.getLogger("degradation_curve")


def sweep(seed: int, companies: int, profile: str, rates: list[float], code_fault_rate: float):
    instance = generate_benchmark(seed, companies, (2022, 2023), profile)
    rows = []
    for p in rates:
        started = time.perf_counter()
        sim = SimulatedAnalyst(cot_error_rate=p, code_fault_rate=code_fault_rate, seed=seed)
        report = stratify(evaluate(instance, [sim], ["cot", "pot"]).records)
        for (paradigm, _), series in emit_curve(report).items():
            rows.append({"rate": p, "paradigm": paradigm, **{row: one_decimal(acc) for row, acc in series}})
        logger.info("rate %.3f done in %.2fs", p, time.perf_counter() - started)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--companies", type=int, default=50)
    ap.add_argument("--profile", default="standard")
    ap.add_argument("--rates", default="0,0.05,0.1,0.15,0.2,0.3")
    ap.add_argument("--code-fault-rate", type=float, default=0.2)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    rates = [float(r) for r in args.rates.split(",")]
    rows = sweep(args.seed, args.companies, args.profile, rates, args.code_fault_rate)
    fields = ["rate", "paradigm", *CURVE_ORDER]
    print(" | ".join(f"{f:>17}" for f in fields))
    for r in rows:
        print(" | ".join(f"{r[f]!s:>17}" for f in fields))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())

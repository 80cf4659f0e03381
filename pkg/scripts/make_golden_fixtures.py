"""Regenerate the golden instance and transcript used by the test suite.

The transcript is recorded from the perfect simulated analyst over all
three paradigms, so replaying it through ScriptedBackend must score 100%.

    python3 scripts/make_golden_fixtures.py [outdir]
"""

from __future__ import annotations

import sys
from pathlib import Path

from ccb.benchgen import generate_benchmark
from ccb.harness import evaluate
from ccb.potloop.backends import RecordingBackend
from ccb.potloop.simulated import SimulatedAnalyst

GOLDEN_SEED = 7
GOLDEN_YEARS = (2022, 2023)


def main(outdir: str = "tests/fixtures") -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    instance = generate_benchmark(GOLDEN_SEED, 1, GOLDEN_YEARS, "standard")
    digest = instance.save(out / "golden_instance.json")
    recorder = RecordingBackend(SimulatedAnalyst.perfect())
    run = evaluate(instance, [recorder], ["direct", "cot", "pot"])
    assert all(r.correct for r in run.records), "perfect analyst missed a query"
    recorder.save(out / "golden_transcript.json")
    print(f"instance {digest}")
    print(f"transcript entries {len(recorder.transcript())}")


if __name__ == "__main__":
    main(*sys.argv[1:])

#!/usr/bin/env python3
"""Rewrite the golden event log used by the acceptance suite.

Run after an intentional change to the simulator's event output, then review
the diff by hand before committing it.
"""

from datetime import datetime, timezone
from pathlib import Path

from curtailfl.config import load_scenario
from curtailfl.sim import run
from curtailfl.trace import load_traces

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    sc = load_scenario(ROOT / "demo" / "scenarios" / "curtailment_aware.ini")
    traces = load_traces(ROOT / "demo" / "traces", datetime.fromisoformat(sc.epoch).astimezone(timezone.utc))
    out = ROOT / "tests" / "golden" / "curtailment_aware_events.jsonl"
    out.write_text(run(sc, traces).events.to_jsonl(), encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

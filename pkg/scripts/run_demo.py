#!/usr/bin/env python3
"""Run the three bundled demo scenarios side by side and validate each log."""

import argparse
import sys
from pathlib import Path

from curtailfl import cli
from curtailfl.replay import replay_check
from curtailfl.sim import EventLog

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ("centralized", "federated_2site", "curtailment_aware")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/demo"))
    args = ap.parse_args()
    paths = [ROOT / "demo" / "scenarios" / f"{s}.ini" for s in SCENARIOS]
    argv = ["compare", "--traces", str(ROOT / "demo" / "traces"), "--out", str(args.out)]
    for p in paths:
        argv += ["--scenario", str(p)]
    code = cli.main(argv)
    if code:
        return code
    print()
    for p in paths:
        sc, traces = cli.load_inputs(p, ROOT / "demo" / "traces")
        log = EventLog.from_jsonl((args.out / sc.name / "events.jsonl").read_text())
        v = replay_check(log, sc, traces)
        print(f"replay_check {sc.name:<18} {'ok' if v else f'{v.violation}: {v.detail}'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Write the bundled synthetic MOER traces to demo/traces/.

Four regions sampled every 5 minutes over 24 h from the scenario epoch
(2026-01-11 17:00 UTC). Curtailed stretches sit at 20-45 gCO2/kWh, the rest
at 320-480 gCO2/kWh. Window layout (hh:mm UTC):

    CAISO_NORTH  17:05-19:00, 19:15-23:25
    SA           21:40-09:20, 5 min dip at 04:10
    SPP_TX       03:20-10:00, 5 min dip at 06:00
    DE           never
"""

import argparse
import random
from pathlib import Path

STEP = 300
HORIZON = 24 * 3600


def hhmm(h: int, m: int) -> int:
    """Seconds since 17:00 for a wall-clock time on the 11th/12th."""
    return ((h - 17) % 24) * 3600 + m * 60


WINDOWS = {
    "CAISO_NORTH": [(hhmm(17, 5), hhmm(19, 0)), (hhmm(19, 15), hhmm(23, 25))],
    "SA": [(hhmm(21, 40), hhmm(4, 10)), (hhmm(4, 15), hhmm(9, 20))],
    "SPP_TX": [(hhmm(3, 20), hhmm(6, 0)), (hhmm(6, 5), hhmm(10, 0))],
    "DE": [],
}


def make(region: str, seed: int) -> str:
    rng = random.Random(f"{region}-{seed}")
    lines = ["timestamp,moer"]
    for t in range(0, HORIZON, STEP):
        curtailed = any(a <= t < b for a, b in WINDOWS[region])
        moer = rng.randint(20, 45) if curtailed else rng.randint(320, 480)
        lines.append(f"{t},{moer}")
    return "\n".join(lines) + "\n"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "demo" / "traces")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for region in WINDOWS:
        (args.out / f"{region}.csv").write_text(make(region, args.seed), encoding="utf-8")
        print(f"wrote {args.out / (region + '.csv')}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Final objective of centralized vs curtailment-aware training across settings.

Uses the bundled convergence scenarios (32-dim regression, 16 x 4096 rows) and
varies the learning rate and label noise. Prints f/f_init for both runs and
their ratio, which shows where the two agree and where federated phases cost
optimization depth.
"""

import argparse
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from curtailfl.config import load_scenario
from curtailfl.sim import run
from curtailfl.trace import load_traces
from curtailfl.trainer import ModelState, corpus_objective

ROOT = Path(__file__).resolve().parent.parent


def with_trainer(sc, **kw):
    return replace(sc, sites=tuple(replace(s, trainer=replace(s.trainer, **kw)) for s in sc.sites))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, nargs="+", default=[0.0003, 0.001, 0.003, 0.01, 0.05])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.5])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    traces = load_traces(ROOT / "demo" / "traces", datetime(2026, 1, 11, 17, tzinfo=timezone.utc))
    print(f"{'noise':>5} {'lr':>7} {'seed':>4} {'f_cen/f0':>10} {'f_cur/f0':>10} {'ratio':>7}")
    for noise in args.noise:
        for lr in args.lr:
            for seed in args.seeds:
                runs = []
                for name in ("convergence_centralized", "convergence_curtailment"):
                    sc = load_scenario(ROOT / "demo" / "scenarios" / f"{name}.ini", seed=seed)
                    runs.append(run(with_trainer(sc, learning_rate=lr, noise_scale=noise), traces))
                spec = with_trainer(load_scenario(ROOT / "demo" / "scenarios" / "convergence_centralized.ini", seed=seed), noise_scale=noise).sites[0].trainer
                f0 = corpus_objective(ModelState.zeros(spec.dim), spec, runs[0].table)
                fc, fa = (corpus_objective(r.model, spec, r.table) for r in runs)
                print(f"{noise:>5} {lr:>7} {seed:>4} {fc / f0:>10.3g} {fa / f0:>10.3g} {fa / fc:>7.3f}")


if __name__ == "__main__":
    main()

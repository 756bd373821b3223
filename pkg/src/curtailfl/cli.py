"""Command-line entry point.

Exit codes: 0 success, 2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, dump_scenario, load_scenario
from .sim import Scenario, SimResult, check_inputs, run
from .trace import TraceError, load_traces
from .trainer import NUMERIC, corpus_objective

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

ARTIFACTS = ("events.jsonl", "energy.csv", "summary.csv", "model.bin", "scenario.ini")

log = logging.getLogger("curtailfl")


class ValidationFailed(Exception):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("\n".join(problems))
        self.problems = problems


def _epoch(scenario: Scenario) -> datetime:
    dt = datetime.fromisoformat(scenario.epoch.replace("Z", "+00:00"))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def load_inputs(scenario_path, trace_dir, horizon: int | None = None, seed: int | None = None):
    """Parse and cross-check a scenario and its traces, or raise ValidationFailed."""
    try:
        scenario = load_scenario(scenario_path, horizon=horizon, seed=seed)
    except ConfigError as exc:
        raise ValidationFailed(exc.problems) from None
    except OSError as exc:
        raise ValidationFailed([f"scenario: {exc}"]) from None
    try:
        epoch = _epoch(scenario)
    except ValueError:
        raise ValidationFailed([f"scenario.epoch: not ISO-8601: {scenario.epoch!r}"]) from None
    try:
        traces = load_traces(trace_dir, epoch)
    except (TraceError, OSError) as exc:
        raise ValidationFailed([f"traces: {exc}"]) from None
    problems = check_inputs(scenario, traces)
    if problems:
        raise ValidationFailed(problems)
    return scenario, traces


def final_objective(scenario: Scenario, result: SimResult) -> float | None:
    spec = scenario.sites[0].trainer
    if spec.kind != NUMERIC:
        return None
    return corpus_objective(result.model, spec, result.table)


def write_artifacts(out_dir: Path, scenario: Scenario, result: SimResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "events.jsonl").write_text(result.events.to_jsonl(), encoding="utf-8")
    (out_dir / "energy.csv").write_text(result.ledger.to_csv(), encoding="utf-8")
    (out_dir / "summary.csv").write_text(result.report.to_csv(), encoding="utf-8")
    (out_dir / "model.bin").write_bytes(result.model.params.astype("<f8").tobytes())
    (out_dir / "scenario.ini").write_text(dump_scenario(scenario), encoding="utf-8")


def read_model(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f8")


def _summary_lines(name: str, result: SimResult) -> list[str]:
    r = result.report
    return [
        f"scenario           {name}",
        f"finished           {result.reason} at t={r.wall_clock_s}s ({r.wall_clock_s / 3600:.2f} h)",
        f"rounds / steps     {r.rounds} / {r.steps_total}",
        f"energy             {r.total_energy_kwh:.3f} kWh",
        f"curtailed fraction {r.curtailed_fraction:.4f}",
        f"emissions          {r.total_emissions_g:.1f} gCO2",
    ]


def _remove_partial(out_dir: Path, existed: bool) -> None:
    if not existed and out_dir.exists():
        shutil.rmtree(out_dir)
        return
    for name in ARTIFACTS:
        (out_dir / name).unlink(missing_ok=True)


def _run_one(scenario_path, trace_dir, out_dir: Path, seed=None, horizon=None) -> tuple[Scenario, SimResult]:
    scenario, traces = load_inputs(scenario_path, trace_dir, horizon=horizon, seed=seed)
    existed = out_dir.exists()
    try:
        result = run(scenario, traces)
        write_artifacts(out_dir, scenario, result)
    except Exception:
        _remove_partial(out_dir, existed)
        raise
    return scenario, result


def _print_problems(problems: list[str]) -> None:
    for p in problems:
        print(p, file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        scenario, traces = load_inputs(args.scenario, args.traces, horizon=args.horizon)
    except ValidationFailed as exc:
        _print_problems(exc.problems)
        return EXIT_INVALID
    print(f"ok: {len(scenario.sites)} sites, {len(traces)} traces, horizon {scenario.horizon}s")
    return EXIT_OK


def cmd_run(args) -> int:
    out = Path(args.out)
    try:
        scenario, result = _run_one(args.scenario, args.traces, out, seed=args.seed, horizon=args.horizon)
    except ValidationFailed as exc:
        _print_problems(exc.problems)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any simulation failure maps to exit 3
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\n".join(_summary_lines(scenario.name or Path(args.scenario).stem, result)))
    return EXIT_OK


COMPARE_COLUMNS = (
    "scenario",
    "runtime_h",
    "final_objective",
    "energy_kwh",
    "curtailed_fraction",
    "emissions_g",
    "rows_total",
    "finished",
)


def comparison_rows(named_results) -> list[dict]:
    rows = []
    for name, scenario, result in named_results:
        obj = final_objective(scenario, result)
        r = result.report
        rows.append(
            {
                "scenario": name,
                "runtime_h": r.wall_clock_s / 3600,
                "final_objective": "" if obj is None else obj,
                "energy_kwh": r.total_energy_kwh,
                "curtailed_fraction": r.curtailed_fraction,
                "emissions_g": r.total_emissions_g,
                "rows_total": r.rows_total,
                "finished": result.reason,
            }
        )
    return rows


def format_table(rows: list[dict]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4g}" if abs(v) < 1e-3 and v else f"{v:.3f}"
        return str(v)

    cells = [list(COMPARE_COLUMNS)] + [[fmt(r[c]) for c in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells) + "\n"


def cmd_compare(args) -> int:
    if len(args.scenario) < 2:
        print("compare needs at least two --scenario files", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    loaded = []
    for path in args.scenario:
        try:
            loaded.append(load_inputs(path, args.traces, horizon=args.horizon, seed=args.seed))
        except ValidationFailed as exc:
            _print_problems([f"{path}: {p}" for p in exc.problems])
            return EXIT_INVALID
    results = []
    seen: set[str] = set()
    for path, (scenario, _) in zip(args.scenario, loaded):
        name = scenario.name or Path(path).stem
        while name in seen:
            name += "_"
        seen.add(name)
        try:
            _, result = _run_one(path, args.traces, out / name, seed=args.seed, horizon=args.horizon)
        except Exception as exc:  # noqa: BLE001
            print(f"{name}: run failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        results.append((name, scenario, result))
    rows = comparison_rows(results)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (out / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")
    table = format_table(rows)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="curtailfl", description="Curtailment-aware federated training simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario and its traces")
    p.add_argument("--scenario", required=True)
    p.add_argument("--traces", required=True, help="directory of <region_id>.csv files")
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one scenario and write artifacts")
    p.add_argument("--scenario", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the synthetic-data seed")
    p.add_argument("--horizon", type=int, help="override the horizon (seconds)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several scenarios and tabulate them")
    p.add_argument("--scenario", action="append", required=True, help="repeat for each scenario")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Site energy, curtailed-energy fraction and marginal emissions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

from .trace import CarbonTrace, CurtailmentConfig, segments


class LedgerError(ValueError):
    pass


@dataclass(frozen=True)
class SitePowerModel:
    site_id: str
    power_kw: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.power_kw) and self.power_kw > 0):
            raise ValueError(f"{self.site_id}: power_kw must be finite and > 0")


@dataclass(frozen=True)
class EnergyInterval:
    site_id: str
    start: int
    end: int
    power_kw: float
    energy_kwh: float
    curtailed: bool
    moer: float
    emissions_g: float


@dataclass
class EnergyLedger:
    intervals: list[EnergyInterval] = field(default_factory=list)
    # per-site sorted (start, end) spans already recorded
    _spans: dict[str, list[tuple[int, int]]] = field(default_factory=dict, repr=False)

    def site_ids(self) -> list[str]:
        return sorted({iv.site_id for iv in self.intervals})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["site_id", "start", "end", "kwh", "curtailed", "emissions_g"])
        for iv in self.intervals:
            w.writerow([iv.site_id, iv.start, iv.end, repr(iv.energy_kwh), int(iv.curtailed), repr(iv.emissions_g)])
        return buf.getvalue()


def record_interval(
    ledger: EnergyLedger,
    site_id: str,
    start: int,
    end: int,
    trace: CarbonTrace,
    cfg: CurtailmentConfig,
    power_kw: float,
) -> EnergyLedger:
    """Append ``[start, end)`` at ``power_kw``, split at every MOER change."""
    if end <= start:
        raise LedgerError(f"{site_id}: empty or inverted interval [{start}, {end})")
    if power_kw < 0:
        raise LedgerError(f"{site_id}: negative power")
    spans = ledger._spans.setdefault(site_id, [])
    for a, b in spans:
        if start < b and a < end:
            raise LedgerError(f"{site_id}: [{start}, {end}) overlaps recorded [{a}, {b})")
    spans.append((start, end))
    spans.sort()
    for a, b, m in segments(trace, start, end):
        kwh = power_kw * (b - a) / 3600.0
        ledger.intervals.append(
            EnergyInterval(site_id, a, b, power_kw, kwh, m < cfg.threshold, m, kwh * m)
        )
    return ledger


@dataclass(frozen=True)
class RunReport:
    total_energy_kwh: float = 0.0
    curtailed_energy_kwh: float = 0.0
    curtailed_fraction: float = 0.0
    total_emissions_g: float = 0.0
    wall_clock_s: int = 0
    training_s: float = 0.0
    overhead_s: float = 0.0
    provisioned_s: int = 0
    rounds: int = 0
    steps_total: int = 0
    rows_total: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "value"])
        for f in fields(self):
            w.writerow([f.name, repr(getattr(self, f.name))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunReport":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            name, raw = row
            values[name] = int(raw) if kinds[name] in ("int", int) else float(raw)
        return cls(**values)


def finalize(
    ledger: EnergyLedger,
    rounds: int = 0,
    steps_total: int = 0,
    wall_clock_s: int = 0,
    training_s: float = 0.0,
    overhead_s: float = 0.0,
    rows_total: int = 0,
) -> RunReport:
    total = 0.0
    curtailed = 0.0
    emissions = 0.0
    provisioned = 0
    for iv in ledger.intervals:
        total += iv.energy_kwh
        emissions += iv.emissions_g
        provisioned += iv.end - iv.start
        if iv.curtailed:
            curtailed += iv.energy_kwh
    return RunReport(
        total_energy_kwh=total,
        curtailed_energy_kwh=curtailed,
        curtailed_fraction=curtailed / total if total > 0 else 0.0,
        total_emissions_g=emissions,
        wall_clock_s=wall_clock_s,
        training_s=training_s,
        overhead_s=overhead_s,
        provisioned_s=provisioned,
        rounds=rounds,
        steps_total=steps_total,
        rows_total=rows_total,
    )

"""Post-hoc validation of an event log against its scenario and traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .accounting import EnergyLedger, LedgerError, record_interval
from .sim import ALWAYS_ON, EventLog, Scenario
from .trace import CarbonTrace, curtailment_at, segments


@dataclass(frozen=True)
class Verdict:
    ok: bool
    violation: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


class _Violation(Exception):
    def __init__(self, name: str, detail: str) -> None:
        super().__init__(detail)
        self.name = name
        self.detail = detail


def _fail(name: str, detail: str):
    raise _Violation(name, detail)


def _signal_held(scenario: Scenario, trace: CarbonTrace, a: int, b: int, value: bool) -> bool:
    """True when the site's curtailment signal equals ``value`` on ``[a, b]``."""
    if scenario.policy == ALWAYS_ON:
        return value
    if a < 0:
        return False
    thr = scenario.curtailment.threshold
    for _, _, m in segments(trace, a, b):
        if (m < thr) != value:
            return False
    return curtailment_at(trace, scenario.curtailment, b) == value


def replay_check(log: EventLog, scenario: Scenario, traces: Mapping[str, CarbonTrace]) -> Verdict:
    try:
        _check(log, scenario, traces)
    except _Violation as v:
        return Verdict(False, v.name, v.detail)
    return Verdict(True)


def _check(log: EventLog, scenario: Scenario, traces: Mapping[str, CarbonTrace]) -> None:
    hp = scenario.hysteresis
    region = {s.site_id: s.region_id for s in scenario.sites}
    power = {s.site_id: s.power.power_kw for s in scenario.sites}

    # ordering and termination
    last_t = -math.inf
    for i, e in enumerate(log):
        if e.seq != i:
            _fail("ordering", f"event {i} carries seq {e.seq}")
        if e.t < last_t:
            _fail("ordering", f"event {i} at t={e.t} precedes t={last_t}")
        last_t = e.t
    done = log.of_kind("RunComplete")
    if len(done) != 1 or log[-1].kind != "RunComplete":
        _fail("termination", f"expected exactly one trailing RunComplete, found {len(done)}")
    end = done[0].t

    # lifecycle: debounce, delay, alternation
    provisioned_at: dict[str, int | None] = {s: None for s in region}
    spans: dict[str, list[tuple[int, int]]] = {s: [] for s in region}
    for e in log:
        site = e.payload.get("site")
        if e.kind == "ProvisionRequested":
            if not _signal_held(scenario, traces[region[site]], e.t - hp.tau_up, e.t, True):
                _fail("debounce-up", f"{site} provisioned at t={e.t} without {hp.tau_up}s of curtailment")
            if provisioned_at[site] is not None:
                _fail("flapping", f"{site} provisioned twice without going offline (t={e.t})")
            provisioned_at[site] = e.t
        elif e.kind == "SiteReady":
            if provisioned_at[site] is None or e.t != provisioned_at[site] + hp.provision_delay:
                _fail("ready-delay", f"{site} ready at t={e.t}, requested at {provisioned_at[site]}")
        elif e.kind == "DeprovisionRequested":
            if not _signal_held(scenario, traces[region[site]], e.t - hp.tau_down, e.t, False):
                _fail("debounce-down", f"{site} deprovisioned at t={e.t} without {hp.tau_down}s of non-curtailment")
        elif e.kind == "SiteOffline":
            if provisioned_at[site] is None:
                _fail("flapping", f"{site} went offline at t={e.t} while not provisioned")
            spans[site].append((provisioned_at[site], e.t))
            provisioned_at[site] = None
    for site, since in provisioned_at.items():
        if since is not None:
            spans[site].append((since, end))

    # modes and shard partitions
    mode = "idle"
    for e in log:
        if e.kind == "ModeChange":
            mode = e.payload["mode"]
            n = len(e.payload["sites"])
            if (mode == "idle" and n) or (mode == "solo" and n != 1) or (mode == "federated" and n < 2):
                _fail("mode", f"mode {mode} with {n} sites at t={e.t}")
        elif e.kind == "RoundStart":
            if mode != "federated" or len(e.payload["sites"]) < 2:
                _fail("mode", f"round {e.payload['round']} started outside federated mode at t={e.t}")
            owner: dict[int, str] = {}
            for site, entries in e.payload["assignments"].items():
                for j, _ in entries:
                    if j in owner:
                        _fail("partition", f"shard {j} assigned to {owner[j]} and {site} in round {e.payload['round']}")
                    owner[j] = site
        elif e.kind == "RoundJoin":
            released = {j for js in e.payload["released"].values() for j in js}
            for j, _ in e.payload["assignment"]:
                if j not in released:
                    _fail("partition", f"joiner {e.payload['site']} got unreleased shard {j}")
        elif e.kind == "SoloCommit" and mode != "solo":
            _fail("mode", f"solo commit outside solo mode at t={e.t}")

    # energy ledger
    intervals = [e for e in log if e.kind == "PowerInterval"]
    by_site: dict[str, list[tuple[int, int]]] = {}
    for e in intervals:
        p = e.payload
        by_site.setdefault(p["site"], []).append((p["start"], p["end"]))
    for site, ivs in by_site.items():
        ivs.sort()
        for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
            if a1 < b0:
                _fail("ledger-overlap", f"{site}: [{a0},{b0}) overlaps [{a1},{b1})")
        for a, b in ivs:
            if not any(s <= a and b <= t for s, t in spans.get(site, [])):
                _fail("idle-energy", f"{site}: energy drawn on [{a},{b}) outside a provisioned span")
    ledger = EnergyLedger()
    expected = 0.0
    try:
        for e in intervals:
            p = e.payload
            if p["kw"] > power[p["site"]] * (1 + 1e-12):
                _fail("power", f"{p['site']} drew {p['kw']} kW above its rating")
            record_interval(ledger, p["site"], p["start"], p["end"], traces[region[p["site"]]], scenario.curtailment, p["kw"])
            expected += p["kw"] * (p["end"] - p["start"]) / 3600.0
    except LedgerError as exc:
        _fail("ledger-overlap", str(exc))
    total = sum(iv.energy_kwh for iv in ledger.intervals)
    if not math.isclose(total, expected, rel_tol=1e-9, abs_tol=1e-12):
        _fail("energy-conservation", f"ledger {total} kWh vs metered {expected} kWh")

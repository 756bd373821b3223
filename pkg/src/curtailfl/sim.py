"""Deterministic discrete-event replay of curtailment-aware training.

The engine owns a single priority queue ordered by ``(time, priority, seq)``.
Signal changes sort before every other event at the same second, and the
horizon sorts after them. Training is simulated in whole segments (one
federated round, or one solo stretch) rather than per optimizer step; a
segment's site updates are computed when the segment, or the site, stops.

Logged event kinds:

``SignalChange`` ``ProvisionRequested`` ``SiteReady`` ``DeprovisionRequested``
``DrainComplete`` ``SiteOffline`` ``ModeChange`` ``RoundStart`` ``RoundJoin``
``RoundCommit`` ``SoloCommit`` ``PowerInterval`` ``RunComplete``
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from . import provisioner as prov
from .accounting import EnergyLedger, RunReport, SitePowerModel, finalize, record_interval
from .coordinator import (
    FEDERATED,
    IDLE,
    SOLO,
    ExecutionMode,
    RoundConfig,
    RoundRecord,
    aggregate,
    commit,
)
from .datamgr import ShardAssignment, ShardTable, assign_shards, remaining_rows
from .provisioner import HysteresisParams, SiteLifecycle
from .trace import CarbonTrace, CurtailmentConfig, moer_at, signal_changes
from .trainer import (
    ModelState,
    SiteUpdate,
    TrainerSpec,
    busy_seconds,
    local_train,
    steps_for_budget,
    steps_to_exhaust,
)

log = logging.getLogger(__name__)

CURTAILMENT = "curtailment"
ALWAYS_ON = "always_on"

WORK_DONE = "work_done"
HORIZON = "horizon"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SiteSpec:
    site_id: str
    region_id: str
    power: SitePowerModel
    trainer: TrainerSpec
    weight: int = 1


@dataclass(frozen=True)
class Scenario:
    sites: tuple[SiteSpec, ...]
    horizon: int
    num_shards: int
    shard_size: int
    hysteresis: HysteresisParams = HysteresisParams()
    rounds: RoundConfig = RoundConfig()
    curtailment: CurtailmentConfig = CurtailmentConfig()
    seed: int = 0
    epoch: str = "1970-01-01T00:00:00+00:00"
    policy: str = CURTAILMENT
    idle_power_fraction: float = 1.0
    failures: tuple[tuple[str, int], ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if not self.sites:
            raise ScenarioError("scenario has no sites")
        ids = [s.site_id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate site ids")
        if self.horizon <= 0:
            raise ScenarioError("horizon must be > 0")
        if self.num_shards < 1 or self.shard_size < 1:
            raise ScenarioError("shards.count and shards.size must be >= 1")
        if self.policy not in (CURTAILMENT, ALWAYS_ON):
            raise ScenarioError(f"unknown policy {self.policy!r}")
        if not 0 <= self.idle_power_fraction <= 1:
            raise ScenarioError("idle_power_fraction must lie in [0, 1]")
        kinds = {(s.trainer.kind, s.trainer.dim, s.trainer.data_seed, s.trainer.noise_scale) for s in self.sites}
        if len(kinds) != 1:
            raise ScenarioError("all sites must share trainer kind, dim, data seed and noise scale")

    @property
    def site_ids(self) -> list[str]:
        return sorted(s.site_id for s in self.sites)

    @property
    def dim(self) -> int:
        return self.sites[0].trainer.dim

    def site(self, site_id: str) -> SiteSpec:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise KeyError(site_id)

    def with_seed(self, seed: int) -> "Scenario":
        sites = tuple(replace(s, trainer=replace(s.trainer, data_seed=seed)) for s in self.sites)
        return replace(self, seed=seed, sites=sites)


@dataclass(frozen=True)
class Event:
    t: int
    seq: int
    kind: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {"t": self.t, "seq": self.seq, "kind": self.kind}
        obj.update(self.payload)
        return json.dumps(obj, separators=(",", ":"))


class EventLog(list):
    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self)

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        out = cls()
        for line in text.splitlines():
            if line.strip():
                obj = json.loads(line)
                t, seq, kind = obj.pop("t"), obj.pop("seq"), obj.pop("kind")
                out.append(Event(t, seq, kind, obj))
        return out

    def of_kind(self, *kinds: str) -> list[Event]:
        return [e for e in self if e.kind in kinds]


@dataclass
class SimResult:
    events: EventLog
    report: RunReport
    model: ModelState
    table: ShardTable
    ledger: EnergyLedger
    rounds: list[RoundRecord]
    reason: str


def check_inputs(scenario: Scenario, traces: Mapping[str, CarbonTrace]) -> list[str]:
    problems = []
    for s in scenario.sites:
        tr = traces.get(s.region_id)
        if tr is None:
            problems.append(f"site {s.site_id}: no trace for region {s.region_id!r}")
        elif tr.start > 0:
            problems.append(f"region {s.region_id}: trace starts at {tr.start}, after the scenario epoch")
    return problems


# -- internal bookkeeping -----------------------------------------------------

_PRIO_SIGNAL = 0
_PRIO_DEFAULT = 1
_PRIO_HORIZON = 2


@dataclass
class _Participant:
    site_id: str
    spec: TrainerSpec
    assignment: ShardAssignment | None
    train_start: int
    stop: int | None  # None: open-ended solo
    update: SiteUpdate | None = None
    report_time: int | None = None

    def rows(self, table: ShardTable) -> int:
        return self.assignment.rows(table) if self.assignment else 0

    def budget_until(self, t: int) -> int:
        end = t if self.stop is None else min(t, self.stop)
        return max(0, end - self.train_start)


@dataclass
class _Segment:
    kind: str  # "round" | "solo"
    index: int
    start: int
    deadline: int | None
    theta: ModelState
    table: ShardTable
    parts: dict[str, _Participant]
    gen: int


class _Meter:
    """Power change points for one site, flushed into the ledger on shutdown."""

    def __init__(self) -> None:
        self.points: list[tuple[int, float]] = []

    def set(self, t: int, kw: float) -> None:
        while self.points and self.points[-1][0] >= t:
            self.points.pop()
        self.points.append((t, kw))

    def close(self, t: int) -> list[tuple[int, int, float]]:
        pts = [p for p in self.points if p[0] < t]
        out: list[tuple[int, int, float]] = []
        for (a, kw), nxt in zip(pts, pts[1:] + [(t, 0.0)]):
            b = nxt[0]
            if kw <= 0 or b <= a:
                continue
            if out and out[-1][1] == a and out[-1][2] == kw:
                out[-1] = (out[-1][0], b, kw)
            else:
                out.append((a, b, kw))
        self.points = []
        return out


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        traces: Mapping[str, CarbonTrace],
        consumed: list | None = None,
    ) -> None:
        problems = check_inputs(scenario, traces)
        if problems:
            raise ScenarioError("; ".join(problems))
        self.sc = scenario
        self.traces = traces
        self.consumed = consumed
        self.params = scenario.hysteresis
        self.cfg = scenario.rounds
        self.specs = {s.site_id: s for s in scenario.sites}
        self.life = {s: SiteLifecycle(s) for s in scenario.site_ids}
        self.meters = {s: _Meter() for s in scenario.site_ids}
        self.theta = ModelState.zeros(scenario.dim)
        self.table = ShardTable.uniform(scenario.num_shards, scenario.shard_size)
        self.ledger = EnergyLedger()
        self.events = EventLog()
        self.rounds: list[RoundRecord] = []
        self.history: list[tuple[int, tuple[int, ...]]] = []  # progress after each commit
        self.failures = set(scenario.failures)
        self.mode = ExecutionMode(IDLE)
        self.seg: _Segment | None = None
        self._queue: list = []
        self._seq = 0
        self._gen = 0
        self._round_index = 0
        self.done: str | None = None
        self.end_time = 0
        self.steps_total = 0
        self.rows_total = 0
        self.training_s = 0.0
        self.overhead_s = 0.0

    # -- queue and log --------------------------------------------------------

    def _push(self, t: int, kind: str, prio: int = _PRIO_DEFAULT, **data) -> None:
        heapq.heappush(self._queue, (t, prio, self._seq, kind, data))
        self._seq += 1

    def _log(self, t: int, kind: str, **payload) -> None:
        self.events.append(Event(t, len(self.events), kind, payload))

    # -- main loop ------------------------------------------------------------

    def run(self) -> SimResult:
        sc = self.sc
        regions = sorted({s.region_id for s in sc.sites})
        for r in regions:
            if sc.policy == ALWAYS_ON:
                changes = [(0, True)]
            else:
                changes = signal_changes(self.traces[r], sc.curtailment, 0, sc.horizon)
            for t, value in changes:
                self._push(t, "signal", _PRIO_SIGNAL, region=r, value=value)
        self._push(sc.horizon, "horizon", _PRIO_HORIZON)
        if remaining_rows(self.table) == 0:
            self._finish(0, WORK_DONE)

        while self._queue and self.done is None:
            t, _, _, kind, data = heapq.heappop(self._queue)
            getattr(self, f"_on_{kind}")(t, **data)

        report = finalize(
            self.ledger,
            rounds=len(self.rounds),
            steps_total=self.steps_total,
            wall_clock_s=self.end_time,
            training_s=self.training_s,
            overhead_s=self.overhead_s,
            rows_total=self.rows_total,
        )
        return SimResult(self.events, report, self.theta, self.table, self.ledger, self.rounds, self.done or HORIZON)

    # -- handlers -------------------------------------------------------------

    def _on_signal(self, t: int, region: str, value: bool) -> None:
        self._log(t, "SignalChange", region=region, curtailed=value, moer=moer_at(self.traces[region], t))
        for s in self.sc.site_ids:
            if self.specs[s].region_id == region:
                lc, evs = prov.observe_signal(self.life[s], self.params, t, value)
                self._apply_lifecycle(s, lc, evs)

    def _on_timer(self, t: int, site: str) -> None:
        lc = self.life[site]
        if prov.next_deadline(lc, self.params) != t:
            return  # stale
        lc, evs = prov.observe_signal(lc, self.params, t, lc.last_signal)
        self._apply_lifecycle(site, lc, evs)

    def _on_drain_done(self, t: int, site: str) -> None:
        lc, evs = prov.complete_drain(self.life[site], self.params, t)
        self._apply_lifecycle(site, lc, evs)

    def _on_round_end(self, t: int, gen: int) -> None:
        if self.seg is None or self.seg.gen != gen:
            return
        self._close_round(t)
        self._next_mode(t)

    def _on_solo_end(self, t: int, gen: int) -> None:
        if self.seg is None or self.seg.gen != gen:
            return
        self._close_solo(t)
        self._next_mode(t)

    def _on_horizon(self, t: int) -> None:
        if self.seg is not None:
            if self.seg.kind == "round":
                self._close_round(t)
            else:
                self._close_solo(t)
        self._finish(t, HORIZON)

    # -- lifecycle glue -------------------------------------------------------

    def _apply_lifecycle(self, site: str, lc: SiteLifecycle, evs: list) -> None:
        self.life[site] = lc
        spec = self.specs[site]
        for ev in evs:
            if self.done is not None:
                return
            if ev.kind == prov.PROVISION_REQUESTED:
                self._log(ev.time, ev.kind, site=site)
                self.meters[site].set(ev.time, spec.power.power_kw * self.sc.idle_power_fraction)
            elif ev.kind == prov.SITE_READY:
                self._log(ev.time, ev.kind, site=site)
                self.meters[site].set(ev.time, spec.power.power_kw)
                self._site_ready(ev.time, site)
            elif ev.kind == prov.DEPROVISION_REQUESTED:
                self._log(ev.time, ev.kind, site=site)
                done_at = self._site_leaving(ev.time, site)
                self._push(done_at, "drain_done", site=site)
            elif ev.kind == prov.DRAIN_COMPLETE:
                self._log(ev.time, ev.kind, site=site)
            elif ev.kind == prov.SITE_OFFLINE:
                self._flush_meter(ev.time, site)
                self._log(ev.time, ev.kind, site=site)
        d = prov.next_deadline(self.life[site], self.params)
        if d is not None:
            self._push(d, "timer", site=site)

    def _flush_meter(self, t: int, site: str) -> None:
        region = self.specs[site].region_id
        for a, b, kw in self.meters[site].close(t):
            record_interval(self.ledger, site, a, b, self.traces[region], self.sc.curtailment, kw)
            self._log(t, "PowerInterval", site=site, start=a, end=b, kw=kw)

    def _trainable(self) -> list[str]:
        return [s for s in self.sc.site_ids if self.life[s].trainable]

    # -- mode transitions -----------------------------------------------------

    def _set_mode(self, t: int, mode: ExecutionMode) -> None:
        if mode != self.mode:
            self.mode = mode
            self._log(t, "ModeChange", mode=mode.kind, sites=list(mode.sites))

    def _next_mode(self, t: int) -> None:
        if self.done is not None:
            return
        if remaining_rows(self.table) == 0:
            self._finish(t, WORK_DONE)
            return
        sites = self._trainable()
        if len(sites) >= 2:
            self._start_round(t, sites)
        elif len(sites) == 1:
            self._start_solo(t, sites[0])
        else:
            self.seg = None
            self._set_mode(t, ExecutionMode(IDLE))

    def _site_ready(self, t: int, site: str) -> None:
        if not self.life[site].trainable:
            return
        seg = self.seg
        if seg is None:
            self._next_mode(t)
        elif seg.kind == "solo":
            self._close_solo(t)
            self._next_mode(t)
        else:
            self._join_round(t, site)

    def _site_leaving(self, t: int, site: str) -> int:
        """Stop ``site`` at ``t``; return when its drain completes."""
        seg = self.seg
        if seg is None or site not in seg.parts:
            return t
        part = seg.parts[site]
        if seg.kind == "solo":
            upd = self._close_solo(t)
            done = t + self._overrun(part, upd, t)
            self._next_mode(t)
            return done
        upd = self._train(seg, part, t)
        part.update = upd
        part.report_time = t + self._overrun(part, upd, t)
        self._schedule_end(seg, t)
        return part.report_time

    @staticmethod
    def _overrun(part: _Participant, upd: SiteUpdate, t: int) -> int:
        # the in-flight step may finish after the stop signal
        if upd.batches_b_s == 0:
            return 0
        return max(0, part.train_start + busy_seconds(part.spec, upd.batches_b_s) - t)

    def _train(self, seg: _Segment, part: _Participant, t: int) -> SiteUpdate:
        if part.assignment is None:
            return SiteUpdate(part.site_id, seg.theta, 0, {}, part.budget_until(t), 0)
        upd = local_train(
            seg.theta,
            part.spec,
            part.assignment,
            seg.table,
            part.budget_until(t),
            site_id=part.site_id,
            consumed=self.consumed,
        )
        self.steps_total += upd.batches_b_s
        self.rows_total += upd.rows_consumed
        return upd

    # -- solo -----------------------------------------------------------------

    def _start_solo(self, t: int, site: str) -> None:
        self._gen += 1
        spec = self.specs[site].trainer
        a = assign_shards(self.table, [site]).get(site)
        part = _Participant(site, spec, a, t, None)
        self.seg = _Segment("solo", -1, t, None, self.theta, self.table, {site: part}, self._gen)
        self._set_mode(t, ExecutionMode(SOLO, (site,)))
        need = steps_to_exhaust(spec, part.rows(self.table))
        self._push(t + busy_seconds(spec, need), "solo_end", gen=self._gen)

    def _close_solo(self, t: int) -> SiteUpdate:
        seg = self.seg
        assert seg is not None and seg.kind == "solo"
        (part,) = seg.parts.values()
        upd = self._train(seg, part, t)
        self.training_s += upd.train_seconds
        new = ModelState(upd.theta_s.params, seg.theta.version + 1) if upd.batches_b_s else seg.theta
        self.theta, self.table = commit(self.theta, new, self.table, [upd.progress])
        self.history.append((t, self.table.progress))
        self._log(
            t,
            "SoloCommit",
            site=part.site_id,
            start=seg.start,
            steps=upd.batches_b_s,
            rows=upd.rows_consumed,
            progress={str(j): v for j, v in sorted(upd.progress.items())},
            version=self.theta.version,
            model=self.theta.digest(),
            remaining=remaining_rows(self.table),
        )
        self.seg = None
        return upd

    # -- federated rounds -----------------------------------------------------

    def _start_round(self, t: int, sites: list[str]) -> None:
        self._gen += 1
        cfg = self.cfg
        weights = {s: self.specs[s].weight for s in sites}
        assignments = assign_shards(self.table, sites, weights)
        parts = {}
        for s in sites:
            parts[s] = _Participant(s, self.specs[s].trainer, assignments.get(s), t + cfg.overhead, t + cfg.delta_round)
            self._overhead_power(s, t, cfg.overhead)
        idx = self._round_index
        self._round_index += 1
        self.seg = _Segment("round", idx, t, t + cfg.delta_round, self.theta, self.table, parts, self._gen)
        self._set_mode(t, ExecutionMode(FEDERATED, tuple(sites)))
        self._log(
            t,
            "RoundStart",
            round=idx,
            sites=sites,
            deadline=t + cfg.delta_round,
            assignments={s: [list(e) for e in a.entries] for s, a in sorted(assignments.items())},
            version=self.theta.version,
        )
        self._schedule_end(self.seg, t)

    def _overhead_power(self, site: str, t: int, overhead: int) -> None:
        kw = self.specs[site].power.power_kw
        self.meters[site].set(t, kw * self.sc.idle_power_fraction)
        self.meters[site].set(t + overhead, kw)
        self.overhead_s += overhead

    def _join_round(self, t: int, site: str) -> None:
        seg = self.seg
        assert seg is not None and seg.deadline is not None
        setup = self.cfg.overhead_setup_teardown
        budget = seg.deadline - t - setup
        if budget <= 0 or site in seg.parts:
            return  # waits for the next round
        released: dict[str, list[int]] = {}
        for s, p in sorted(seg.parts.items()):
            if p.assignment is None:
                continue
            if p.update is not None:
                used = p.update.rows_consumed
            else:
                rows = p.rows(seg.table)
                used = min(steps_for_budget(p.spec, p.stop - p.train_start, rows) * p.spec.rows_per_step, rows)
            keep, free = [], []
            for j, start in p.assignment.entries:
                (keep if used > 0 else free).append((j, start))
                used -= seg.table.shard_sizes[j] - start
            if free:
                released[s] = [j for j, _ in free]
                p.assignment = ShardAssignment(s, tuple(keep)) if keep else None
        pool = [j for js in released.values() for j in js]
        a = assign_shards(seg.table, [site], only=pool).get(site) if pool else None
        if a is None:
            return
        spec = self.specs[site].trainer
        seg.parts[site] = _Participant(site, spec, a, t + setup, seg.deadline)
        self._overhead_power(site, t, setup)
        self._set_mode(t, ExecutionMode(FEDERATED, tuple(sorted(seg.parts))))
        self._log(
            t,
            "RoundJoin",
            round=seg.index,
            site=site,
            budget=budget,
            released=released,
            assignment=[list(e) for e in a.entries],
        )
        self._schedule_end(seg, t)

    def _schedule_end(self, seg: _Segment, now: int) -> None:
        """(Re)schedule the end of a round after any membership change."""
        self._gen += 1
        seg.gen = self._gen
        latest = seg.start
        all_done = True
        training = False
        for p in seg.parts.values():
            rows = p.rows(seg.table)
            if p.update is not None:
                latest = max(latest, p.report_time)
                all_done &= p.update.rows_consumed >= rows
                continue
            training = True
            need = steps_to_exhaust(p.spec, rows)
            if need > steps_for_budget(p.spec, p.stop - p.train_start, rows):
                all_done = False
            elif need:
                latest = max(latest, p.train_start + busy_seconds(p.spec, need))
        if all_done or not training:
            end = latest
        else:
            end = seg.deadline
        self._push(max(end, now), "round_end", gen=seg.gen)

    def _close_round(self, t: int) -> None:
        seg = self.seg
        assert seg is not None and seg.kind == "round"
        record = RoundRecord(seg.index, seg.start, t, tuple(sorted(seg.parts)))
        failed = []
        executed: dict[str, SiteUpdate] = {}
        for s, p in sorted(seg.parts.items()):
            upd = p.update if p.update is not None else self._train(seg, p, t)
            executed[s] = upd
            self.training_s += upd.train_seconds
            if (s, seg.index) in self.failures:
                failed.append(s)
                continue
            record.updates.append(upd)
        record.failed = tuple(failed)
        new = aggregate(record.updates) if record.updates else seg.theta
        self.theta, self.table = commit(self.theta, new, self.table, [u.progress for u in record.updates])
        record.aggregated = self.theta
        self.rounds.append(record)
        self.history.append((t, self.table.progress))
        self._log(
            t,
            "RoundCommit",
            round=seg.index,
            sites=sorted(seg.parts),
            steps={s: u.batches_b_s for s, u in executed.items()},
            train_seconds={s: u.train_seconds for s, u in executed.items()},
            failed=failed,
            version=self.theta.version,
            model=self.theta.digest(),
            remaining=remaining_rows(self.table),
        )
        self.seg = None

    # -- termination ----------------------------------------------------------

    def _finish(self, t: int, reason: str) -> None:
        for s in self.sc.site_ids:
            if self.meters[s].points:
                self._flush_meter(t, s)
        self.end_time = t
        self._log(
            t,
            "RunComplete",
            reason=reason,
            version=self.theta.version,
            model=self.theta.digest(),
            remaining=remaining_rows(self.table),
        )
        self.done = reason


def run(scenario: Scenario, traces: Mapping[str, CarbonTrace], consumed: list | None = None) -> SimResult:
    return Simulation(scenario, traces, consumed).run()

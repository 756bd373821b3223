"""Execution modes, work-weighted averaging and atomic round commits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamgr import ShardTable, assign_shards, merge_progress, remaining_rows
from .trainer import ModelState, SiteUpdate, TrainerSpec, local_train


class CoordinatorError(ValueError):
    pass


IDLE = "idle"
SOLO = "solo"
FEDERATED = "federated"


@dataclass(frozen=True)
class ExecutionMode:
    kind: str
    sites: tuple[str, ...] = ()

    def __str__(self) -> str:
        return self.kind if not self.sites else f"{self.kind}({','.join(self.sites)})"


@dataclass(frozen=True)
class RoundConfig:
    delta_round: int = 600
    overhead_serialize: int = 60
    overhead_setup_teardown: int = 55

    def __post_init__(self) -> None:
        if self.overhead_serialize < 0 or self.overhead_setup_teardown < 0:
            raise ValueError("overheads must be >= 0")
        if self.delta_round <= self.overhead:
            raise ValueError(
                f"delta_round ({self.delta_round}) must exceed total overhead ({self.overhead})"
            )

    @property
    def overhead(self) -> int:
        return self.overhead_serialize + self.overhead_setup_teardown

    @property
    def budget(self) -> int:
        return self.delta_round - self.overhead


@dataclass
class RoundRecord:
    round_index: int
    start: int
    end: int
    participants: tuple[str, ...]
    updates: list[SiteUpdate] = field(default_factory=list)
    aggregated: ModelState | None = None
    failed: tuple[str, ...] = ()

    def weights(self) -> dict[str, float]:
        total = sum(u.batches_b_s for u in self.updates)
        if total == 0:
            return {}
        return {u.site_id: u.batches_b_s / total for u in self.updates}

    def training_fraction(self, delta_round: int) -> float:
        return sum(u.train_seconds for u in self.updates) / (delta_round * max(1, len(self.updates)))


def mode_of(active: Iterable[str]) -> ExecutionMode:
    sites = tuple(sorted(active))
    if not sites:
        return ExecutionMode(IDLE)
    if len(sites) == 1:
        return ExecutionMode(SOLO, sites)
    return ExecutionMode(FEDERATED, sites)


def aggregate(updates: Sequence[SiteUpdate]) -> ModelState:
    """Average site models weighted by optimizer steps taken this round.

    Updates are summed in ascending site order. With no work done the
    dispatched model comes back unchanged (every ``theta_s`` equals it).
    """
    if not updates:
        raise CoordinatorError("aggregate needs at least one update")
    ups = sorted(updates, key=lambda u: u.site_id)
    dim = ups[0].theta_s.params.shape
    for u in ups:
        if u.theta_s.params.shape != dim:
            raise CoordinatorError(f"dimension mismatch from {u.site_id}: {u.theta_s.params.shape} vs {dim}")
        if u.batches_b_s < 0:
            raise CoordinatorError(f"negative batch count from {u.site_id}")
    total = sum(u.batches_b_s for u in ups)
    base_version = max(u.theta_s.version for u in ups)
    if total == 0:
        return ModelState(ups[0].theta_s.params, base_version)
    acc = np.zeros(dim)
    for u in ups:
        if u.batches_b_s:
            acc = acc + (u.batches_b_s / total) * u.theta_s.params
    return ModelState(acc, base_version + 1)


def commit(
    theta: ModelState,
    theta_new: ModelState,
    table: ShardTable,
    reported: Sequence[Mapping[int, int]],
) -> tuple[ModelState, ShardTable]:
    """Replace model and progress together, or neither.

    ``reported`` holds one progress map per site that reported. An empty
    sequence means nobody reported and nothing changes.
    """
    if not reported:
        return theta, table
    merged = table
    for rep in reported:
        merged = merge_progress(merged, rep)  # raises before anything is replaced
    return theta_new, merged


def run_round(
    theta: ModelState,
    active: Iterable[str],
    table: ShardTable,
    cfg: RoundConfig,
    trainers: Mapping[str, TrainerSpec],
    round_index: int = 0,
    start: int = 0,
    failed: Iterable[str] = (),
    consumed: list | None = None,
) -> tuple[ModelState, ShardTable, RoundRecord]:
    """One federated round with a fixed membership and no churn."""
    sites = sorted(active)
    if len(sites) < 2:
        raise CoordinatorError(f"federated round needs >= 2 sites, got {sites}")
    if remaining_rows(table) == 0:
        raise CoordinatorError("no work left")
    failed = set(failed)
    assignments = assign_shards(table, sites)
    record = RoundRecord(round_index, start, start + cfg.delta_round, tuple(sites), failed=tuple(sorted(failed & set(sites))))
    reports = []
    for s in sites:
        a = assignments.get(s)
        if a is None:
            upd = SiteUpdate(s, theta, 0, {}, cfg.budget, 0)
        else:
            upd = local_train(theta, trainers[s], a, table, cfg.budget, site_id=s, consumed=consumed)
        if s in failed:
            continue
        record.updates.append(upd)
        reports.append(upd.progress)
    new = aggregate(record.updates) if record.updates else theta
    theta, table = commit(theta, new, table, reports)
    record.aggregated = theta
    return theta, table, record


def run_solo(
    theta: ModelState,
    site: str,
    table: ShardTable,
    trainers: Mapping[str, TrainerSpec],
    until: int,
    start: int = 0,
    consumed: list | None = None,
) -> tuple[ModelState, ShardTable, SiteUpdate]:
    """Continuous single-site training over every incomplete shard."""
    if until < start:
        raise CoordinatorError("solo segment ends before it starts")
    assignment = assign_shards(table, [site]).get(site)
    if assignment is None:
        return theta, table, SiteUpdate(site, theta, 0, {}, until - start, 0)
    upd = local_train(theta, trainers[site], assignment, table, until - start, site_id=site, consumed=consumed)
    new = ModelState(upd.theta_s.params, theta.version + 1) if upd.batches_b_s else theta
    theta, table = commit(theta, new, table, [upd.progress])
    return theta, table, upd

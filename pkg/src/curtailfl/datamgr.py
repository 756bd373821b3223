"""Shard registry: progress vector, round-robin assignment, max-merge commits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ShardTable:
    shard_sizes: tuple[int, ...]
    progress: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.shard_sizes) < 1:
            raise DataError("need at least one shard")
        if len(self.progress) != len(self.shard_sizes):
            raise DataError("progress and shard_sizes differ in length")
        for j, (n, p) in enumerate(zip(self.shard_sizes, self.progress)):
            if n < 1:
                raise DataError(f"shard {j} has size {n}")
            if not 0 <= p <= n:
                raise DataError(f"shard {j}: progress {p} outside [0, {n}]")

    @classmethod
    def uniform(cls, num_shards: int, shard_size: int) -> "ShardTable":
        return cls((shard_size,) * num_shards, (0,) * num_shards)

    @property
    def num_shards(self) -> int:
        return len(self.shard_sizes)

    def incomplete(self) -> list[int]:
        return [j for j, (n, p) in enumerate(zip(self.shard_sizes, self.progress)) if p < n]


@dataclass(frozen=True)
class ShardAssignment:
    site_id: str
    entries: tuple[tuple[int, int], ...]  # (shard_index, start_row)

    def rows(self, table: ShardTable) -> int:
        return sum(table.shard_sizes[j] - start for j, start in self.entries)


def assign_shards(
    table: ShardTable,
    active_sites: Sequence[str],
    weights: Mapping[str, int] | None = None,
    only: Sequence[int] | None = None,
) -> dict[str, ShardAssignment]:
    """Deal incomplete shards, most-progressed first, round-robin over sites.

    ``weights`` repeats a site in the deal order (default 1 each). ``only``
    restricts the deal to a subset of shard indices.
    """
    if not active_sites:
        raise DataError("no active sites to assign shards to")
    pool = table.incomplete()
    if only is not None:
        allowed = set(only)
        pool = [j for j in pool if j in allowed]
    if not pool:
        return {}
    pool.sort(key=lambda j: (-table.progress[j], j))
    order: list[str] = []
    for s in active_sites:
        w = 1 if weights is None else int(weights.get(s, 1))
        if w < 1:
            raise DataError(f"site {s}: weight must be >= 1")
        order.extend([s] * w)
    dealt: dict[str, list[tuple[int, int]]] = {s: [] for s in active_sites}
    for k, j in enumerate(pool):
        dealt[order[k % len(order)]].append((j, table.progress[j]))
    return {s: ShardAssignment(s, tuple(e)) for s, e in dealt.items() if e}


def merge_progress(table: ShardTable, reported: Mapping[int, int]) -> ShardTable:
    p = list(table.progress)
    for j, count in reported.items():
        if not 0 <= j < table.num_shards:
            raise DataError(f"invalid shard index {j}")
        if count < 0 or count > table.shard_sizes[j]:
            raise DataError(f"shard {j}: reported {count} rows, size is {table.shard_sizes[j]}")
        p[j] = max(p[j], count)
    return ShardTable(table.shard_sizes, tuple(p))


def stride_partition(start_row: int, end_row: int, num_ranks: int, rank: int) -> list[int]:
    if num_ranks < 1 or not 0 <= rank < num_ranks:
        raise DataError(f"rank {rank} out of range for {num_ranks} ranks")
    if end_row < start_row:
        raise DataError(f"inverted row range [{start_row}, {end_row})")
    return list(range(start_row + rank, end_row, num_ranks))


def remaining_rows(table: ShardTable) -> int:
    return sum(n - p for n, p in zip(table.shard_sizes, table.progress))

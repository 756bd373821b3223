"""Local training over shard assignments.

Two trainer kinds share one contract:

* ``numeric``: mini-batch SGD on ``f(theta) = 0.5 * ||X theta - y||^2 / n``
  over synthetic linear-regression rows.
* ``throughput``: counts steps and rows, never touches parameters.

The optimizer step is the atomic unit of work. A budget of ``B`` seconds at
``r`` steps/s yields ``floor(B * r)`` steps, at least one if ``B * r > 0``,
capped by the rows left in the assignment (the last step may be short).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .datamgr import ShardAssignment, ShardTable

NUMERIC = "numeric"
THROUGHPUT = "throughput"

_SQRT3 = math.sqrt(3.0)
_STREAM_X = 0x5851F42D4C957F2D
_STREAM_NOISE = 0x14057B7EF767814F
_STREAM_TRUTH = 0x2545F4914F6CDD1D


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerSpec:
    kind: str = THROUGHPUT
    steps_per_second: float = 0.45
    micro_batch_rows: int = 8
    grad_accum: int = 4
    local_ranks: int = 4
    learning_rate: float = 0.05
    data_seed: int = 0
    dim: int = 8
    noise_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, THROUGHPUT):
            raise ValueError(f"trainer kind must be numeric or throughput, got {self.kind!r}")
        if not self.steps_per_second > 0:
            raise ValueError("steps_per_second must be > 0")
        for name in ("micro_batch_rows", "grad_accum", "local_ranks", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")

    @property
    def rows_per_step(self) -> int:
        return self.micro_batch_rows * self.grad_accum * self.local_ranks

    @property
    def rate(self) -> Fraction:
        # exact decimal rate so step counts do not depend on binary rounding
        return Fraction(repr(float(self.steps_per_second)))


@dataclass(frozen=True, eq=False)
class ModelState:
    params: np.ndarray
    version: int = 0

    def __post_init__(self) -> None:
        arr = np.array(self.params, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "params", arr)
        if arr.ndim != 1:
            raise TrainerError("params must be a vector")
        if not np.all(np.isfinite(arr)):
            raise TrainerError("params contain non-finite values")

    @classmethod
    def zeros(cls, dim: int) -> "ModelState":
        return cls(np.zeros(dim))

    def digest(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()[:16]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelState):
            return NotImplemented
        return self.version == other.version and np.array_equal(self.params, other.params)


@dataclass(frozen=True)
class SiteUpdate:
    site_id: str
    theta_s: ModelState
    batches_b_s: int
    progress: dict[int, int] = field(default_factory=dict)
    train_seconds: float = 0
    rows_consumed: int = 0


# -- synthetic rows -----------------------------------------------------------


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _uniform(*keys) -> np.ndarray:
    """Bit-exact uniforms in [0, 1) from a chain of integer keys (broadcast)."""
    keys = [np.asarray(k).astype(np.uint64) for k in keys]
    h = _mix(keys[0])
    for k in keys[1:]:
        h = _mix(h ^ k)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def _mask(v: int) -> int:
    return v & 0xFFFFFFFFFFFFFFFF


def ground_truth(data_seed: int, dim: int) -> np.ndarray:
    u = _uniform(_mask(data_seed), _STREAM_TRUTH, np.arange(dim))
    return 2.0 * u - 1.0


def _dot_rows(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # fixed column order so one row and a batch of rows agree bitwise
    out = np.zeros(x.shape[0])
    for j in range(x.shape[1]):
        out += x[:, j] * w[j]
    return out


def generate_rows(
    data_seed: int, shard_index: int, row_start: int, row_end: int, dim: int, noise_scale: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    if shard_index < 0 or row_start < 0 or row_end < row_start:
        raise TrainerError("row indices must be non-negative and ordered")
    rows = np.arange(row_start, row_end, dtype=np.uint64)[:, None]
    cols = np.arange(dim, dtype=np.uint64)[None, :]
    seed = _mask(data_seed)
    x = (2.0 * _uniform(seed, _STREAM_X, shard_index, rows, cols) - 1.0) * _SQRT3
    y = _dot_rows(x, ground_truth(data_seed, dim))
    if noise_scale:
        e = (2.0 * _uniform(seed, _STREAM_NOISE, shard_index, rows[:, 0]) - 1.0) * _SQRT3
        y = y + noise_scale * e
    return x, y


def generate_row(
    data_seed: int, shard_index: int, row_index: int, dim: int, noise_scale: float = 0.0
) -> tuple[np.ndarray, float]:
    x, y = generate_rows(data_seed, shard_index, row_index, row_index + 1, dim, noise_scale)
    return x[0], float(y[0])


# -- objective ----------------------------------------------------------------


def objective(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    r = x @ theta - y
    return 0.5 * float(r @ r) / len(y)


def gradient(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = x @ theta - y
    return (r @ x) / len(y)


def corpus_objective(theta: ModelState | np.ndarray, spec: TrainerSpec, table: ShardTable) -> float:
    """Objective over every row of every shard."""
    w = theta.params if isinstance(theta, ModelState) else np.asarray(theta)
    total = 0.0
    n = 0
    for j, size in enumerate(table.shard_sizes):
        x, y = generate_rows(spec.data_seed, j, 0, size, spec.dim, spec.noise_scale)
        r = x @ w - y
        total += float(r @ r)
        n += size
    return 0.5 * total / n


# -- step accounting ----------------------------------------------------------


def steps_for_budget(spec: TrainerSpec, budget: float, rows_available: int) -> int:
    if budget < 0:
        raise TrainerError(f"negative training budget {budget}")
    if rows_available <= 0:
        return 0
    work = Fraction(budget) * spec.rate
    steps = math.floor(work)
    if steps == 0 and work > 0:
        steps = 1  # the in-flight step always completes
    return min(steps, -(-rows_available // spec.rows_per_step))


def busy_seconds(spec: TrainerSpec, steps: int) -> int:
    """Whole seconds needed to finish ``steps`` optimizer steps."""
    return math.ceil(Fraction(steps) / spec.rate)


def steps_to_exhaust(spec: TrainerSpec, rows_available: int) -> int:
    return -(-rows_available // spec.rows_per_step) if rows_available > 0 else 0


def _consumption_plan(assignment: ShardAssignment, table: ShardTable, rows: int) -> list[tuple[int, int, int]]:
    plan = []
    left = rows
    for j, start in assignment.entries:
        if left <= 0:
            break
        take = min(table.shard_sizes[j] - start, left)
        plan.append((j, start, start + take))
        left -= take
    return plan


def local_train(
    theta: ModelState,
    spec: TrainerSpec,
    assignment: ShardAssignment,
    table: ShardTable,
    budget: float,
    site_id: str | None = None,
    consumed: list | None = None,
) -> SiteUpdate:
    """Train on ``assignment`` for ``budget`` seconds starting from ``theta``.

    ``consumed`` (optional) receives one ``(shard, start_row, end_row)`` entry
    per contiguous range this call consumed.
    """
    site_id = site_id if site_id is not None else assignment.site_id
    if budget < 0:
        raise TrainerError(f"negative training budget {budget}")
    for j, start in assignment.entries:
        if not 0 <= j < table.num_shards:
            raise TrainerError(f"assignment references unknown shard {j}")
        if start >= table.shard_sizes[j]:
            raise TrainerError(f"assignment references complete shard {j}")
    available = assignment.rows(table)
    steps = steps_for_budget(spec, budget, available)
    rows = min(steps * spec.rows_per_step, available)
    plan = _consumption_plan(assignment, table, rows)
    if consumed is not None:
        consumed.extend(plan)
    progress = {j: end for j, _, end in plan}

    params = theta.params
    if spec.kind == NUMERIC and steps > 0:
        if params.shape[0] != spec.dim:
            raise TrainerError(f"model dimension {params.shape[0]} != trainer dim {spec.dim}")
        blocks = [generate_rows(spec.data_seed, j, a, b, spec.dim, spec.noise_scale) for j, a, b in plan]
        x = np.concatenate([bx for bx, _ in blocks])
        y = np.concatenate([by for _, by in blocks])
        w = params.copy()
        rps = spec.rows_per_step
        for k in range(steps):
            # rank-local gradients over stride-partitioned rows, averaged per
            # row; reducing in step-row order keeps rank count bit-invariant
            sl = slice(k * rps, min((k + 1) * rps, rows))
            w = w - spec.learning_rate * gradient(w, x[sl], y[sl])
        params = w
    return SiteUpdate(
        site_id=site_id,
        theta_s=ModelState(params, theta.version),
        batches_b_s=steps,
        progress=progress,
        train_seconds=budget,
        rows_consumed=rows,
    )

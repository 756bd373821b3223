"""Marginal-emissions traces as right-continuous step functions.

A trace is a list of ``(timestamp, moer)`` samples in integer seconds since
the scenario epoch. Each value holds until the next sample and the last one
is carried forward forever.
"""

from __future__ import annotations

import bisect
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator


class TraceError(ValueError):
    """Raised for malformed trace input or out-of-range lookups."""


@dataclass(frozen=True)
class CurtailmentConfig:
    threshold: float = 100.0

    def __post_init__(self) -> None:
        if not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise ValueError(f"curtailment threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class CarbonTrace:
    region_id: str
    times: tuple[int, ...]
    moers: tuple[float, ...]
    # cached sample list for bisect; excluded from comparisons
    _times_list: list[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.times) == 0:
            raise TraceError(f"trace {self.region_id!r} has no samples")
        if len(self.times) != len(self.moers):
            raise TraceError("times and moers differ in length")
        for a, b in zip(self.times, self.times[1:]):
            if b <= a:
                raise TraceError(f"trace {self.region_id!r}: timestamps not strictly increasing at {b}")
        for m in self.moers:
            if not math.isfinite(m) or m < 0:
                raise TraceError(f"trace {self.region_id!r}: invalid moer {m}")
        object.__setattr__(self, "_times_list", list(self.times))

    @classmethod
    def from_samples(cls, region_id: str, samples) -> "CarbonTrace":
        samples = list(samples)
        return cls(region_id, tuple(int(t) for t, _ in samples), tuple(float(m) for _, m in samples))

    @property
    def samples(self) -> list[tuple[int, float]]:
        return list(zip(self.times, self.moers))

    @property
    def start(self) -> int:
        return self.times[0]

    def index_at(self, t: float) -> int:
        if t < self.times[0]:
            raise TraceError(f"t={t} precedes first sample of {self.region_id!r} at {self.times[0]}")
        return bisect.bisect_right(self._times_list, t) - 1


@dataclass(frozen=True)
class Window:
    start: int
    end: int
    curtailed: bool

    @property
    def kind(self) -> str:
        return "curtailed" if self.curtailed else "not_curtailed"


def _parse_timestamp(raw: str, epoch: datetime | None) -> tuple[int, datetime | None]:
    """Return (seconds since epoch, epoch) for an integer or ISO-8601 stamp."""
    try:
        return int(raw), epoch
    except ValueError:
        pass
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    if epoch is None:
        epoch = dt
    delta = dt - epoch
    seconds = delta.total_seconds()
    if seconds != int(seconds):
        raise ValueError("sub-second timestamps are not supported")
    return int(seconds), epoch


def parse_trace(text: str, region_id: str, epoch: datetime | None = None) -> CarbonTrace:
    """Parse ``timestamp,moer`` CSV rows into a trace.

    ISO-8601 stamps are converted relative to ``epoch``; when no epoch is
    given the first ISO stamp becomes time zero. A single non-numeric first
    line is treated as a header.
    """
    samples: list[tuple[int, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and len(parts) == 2 and _looks_like_header(parts):
            continue
        if len(parts) != 2:
            raise TraceError(f"{region_id}: line {lineno}: expected 'timestamp,moer', got {line!r}")
        try:
            t, epoch = _parse_timestamp(parts[0], epoch)
        except ValueError as exc:
            raise TraceError(f"{region_id}: line {lineno}: bad timestamp {parts[0]!r} ({exc})") from None
        try:
            moer = float(parts[1])
        except ValueError:
            raise TraceError(f"{region_id}: line {lineno}: bad moer {parts[1]!r}") from None
        if not math.isfinite(moer) or moer < 0:
            raise TraceError(f"{region_id}: line {lineno}: moer must be finite and >= 0, got {parts[1]}")
        if samples and t == samples[-1][0]:
            raise TraceError(f"{region_id}: line {lineno}: duplicate timestamp {t}")
        if samples and t < samples[-1][0]:
            raise TraceError(f"{region_id}: line {lineno}: timestamp {t} goes backwards")
        samples.append((t, moer))
    if not samples:
        raise TraceError(f"{region_id}: no samples")
    return CarbonTrace.from_samples(region_id, samples)


def _looks_like_header(parts: list[str]) -> bool:
    # a header has no numeric field at all; "0,abc" is a bad row, not a header
    for p in parts:
        try:
            float(p)
            return False
        except ValueError:
            pass
    return not any(ch.isdigit() for ch in parts[0])


def load_traces(trace_dir: str | os.PathLike, epoch: datetime | None = None) -> dict[str, CarbonTrace]:
    """Load every ``<region_id>.csv`` file in ``trace_dir``."""
    traces = {}
    for name in sorted(os.listdir(trace_dir)):
        if not name.endswith(".csv"):
            continue
        region = name[: -len(".csv")]
        with open(os.path.join(trace_dir, name), encoding="utf-8") as fh:
            traces[region] = parse_trace(fh.read(), region, epoch)
    return traces


def format_trace(trace: CarbonTrace) -> str:
    lines = ["timestamp,moer"]
    lines += [f"{t},{m:g}" for t, m in trace.samples]
    return "\n".join(lines) + "\n"


def moer_at(trace: CarbonTrace, t: float) -> float:
    return trace.moers[trace.index_at(t)]


def curtailment_at(trace: CarbonTrace, cfg: CurtailmentConfig, t: float) -> bool:
    # strict: a value equal to the threshold is not curtailed
    return moer_at(trace, t) < cfg.threshold


def segments(trace: CarbonTrace, start: int, end: int) -> Iterator[tuple[int, int, float]]:
    """Yield ``(a, b, moer)`` constant pieces covering ``[start, end)``."""
    if end < start:
        raise TraceError(f"inverted interval [{start}, {end})")
    if end == start:
        return
    i = trace.index_at(start)
    a = start
    n = len(trace.times)
    while a < end:
        b = trace.times[i + 1] if i + 1 < n else end
        b = min(b, end)
        yield a, b, trace.moers[i]
        a = b
        i += 1


def windows(trace: CarbonTrace, cfg: CurtailmentConfig, horizon: int) -> list[Window]:
    """Maximal constant-kind windows tiling ``[first sample, horizon)``."""
    if horizon < trace.start:
        raise TraceError(f"horizon {horizon} precedes trace start {trace.start}")
    out: list[Window] = []
    for a, b, m in segments(trace, trace.start, horizon):
        c = m < cfg.threshold
        if out and out[-1].curtailed == c:
            out[-1] = Window(out[-1].start, b, c)
        else:
            out.append(Window(a, b, c))
    return out


def signal_changes(trace: CarbonTrace, cfg: CurtailmentConfig, start: int, end: int) -> list[tuple[int, bool]]:
    """Curtailment value at ``start`` followed by every flip in ``(start, end)``."""
    changes: list[tuple[int, bool]] = []
    for a, _, m in segments(trace, start, end) if end > start else []:
        c = m < cfg.threshold
        if not changes or changes[-1][1] != c:
            changes.append((a, c))
    if not changes:
        changes.append((start, curtailment_at(trace, cfg, start)))
    return changes


def integrate_emissions(trace: CarbonTrace, power_kw: float, start: int, end: int) -> float:
    """Grams of CO2 for a constant ``power_kw`` draw over ``[start, end)``."""
    if end < start:
        raise TraceError(f"inverted interval [{start}, {end})")
    if power_kw < 0:
        raise ValueError("power must be >= 0")
    total = 0.0
    for a, b, m in segments(trace, start, end):
        total += power_kw * (b - a) / 3600.0 * m
    return total

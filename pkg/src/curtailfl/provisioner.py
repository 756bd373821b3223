"""Hysteresis-debounced provisioning lifecycle for one site.

The machine is pure: every call takes a lifecycle value and returns a new one
plus the events it produced. Timers are not polled; the caller re-invokes
:func:`observe_signal` at the deadline reported by :func:`next_deadline`.

States::

    Offline -> ArmingUp -> Provisioning -> Active <-> ArmingDown -> Draining -> Offline
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union


class LifecycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class HysteresisParams:
    tau_up: int = 10
    tau_down: int = 600
    provision_delay: int = 300

    def __post_init__(self) -> None:
        for name in ("tau_up", "tau_down", "provision_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class Offline:
    pass


@dataclass(frozen=True)
class ArmingUp:
    signal_high_since: int


@dataclass(frozen=True)
class Provisioning:
    requested_at: int
    ready_at: int


@dataclass(frozen=True)
class Active:
    since: int


@dataclass(frozen=True)
class ArmingDown:
    signal_low_since: int
    active_since: int


@dataclass(frozen=True)
class Draining:
    since: int


State = Union[Offline, ArmingUp, Provisioning, Active, ArmingDown, Draining]

PROVISION_REQUESTED = "ProvisionRequested"
SITE_READY = "SiteReady"
DEPROVISION_REQUESTED = "DeprovisionRequested"
DRAIN_COMPLETE = "DrainComplete"
SITE_OFFLINE = "SiteOffline"


@dataclass(frozen=True)
class LifecycleEvent:
    time: int
    site_id: str
    kind: str


@dataclass(frozen=True)
class SiteLifecycle:
    site_id: str
    state: State = Offline()
    last_signal: bool = False
    last_time: int | None = None

    @property
    def trainable(self) -> bool:
        return isinstance(self.state, (Active, ArmingDown))

    @property
    def provisioned(self) -> bool:
        return not isinstance(self.state, (Offline, ArmingUp))


def next_deadline(lc: SiteLifecycle, params: HysteresisParams) -> int | None:
    s = lc.state
    if isinstance(s, ArmingUp):
        return s.signal_high_since + params.tau_up
    if isinstance(s, Provisioning):
        return s.ready_at
    if isinstance(s, ArmingDown):
        return s.signal_low_since + params.tau_down
    return None


def _advance(lc: SiteLifecycle, params: HysteresisParams, t: int, inclusive: bool, events: list) -> SiteLifecycle:
    """Fire every timer whose deadline is before ``t`` (or at ``t`` if inclusive)."""
    while True:
        d = next_deadline(lc, params)
        if d is None or d > t or (d == t and not inclusive):
            return lc
        s = lc.state
        if isinstance(s, ArmingUp):
            events.append(LifecycleEvent(d, lc.site_id, PROVISION_REQUESTED))
            lc = replace(lc, state=Provisioning(d, d + params.provision_delay))
        elif isinstance(s, Provisioning):
            events.append(LifecycleEvent(d, lc.site_id, SITE_READY))
            # a window that closed mid-provisioning starts the down-timer on arrival
            state = Active(d) if lc.last_signal else ArmingDown(d, d)
            lc = replace(lc, state=state)
        elif isinstance(s, ArmingDown):
            events.append(LifecycleEvent(d, lc.site_id, DEPROVISION_REQUESTED))
            lc = replace(lc, state=Draining(d))


def observe_signal(
    lc: SiteLifecycle, params: HysteresisParams, t: int, curtailed: bool
) -> tuple[SiteLifecycle, list[LifecycleEvent]]:
    """Feed the curtailment value at time ``t``.

    A call with an unchanged value acts as a timer tick. When the value
    changes at exactly a timer deadline, the change wins and the timer is
    cancelled.
    """
    if lc.last_time is not None and t < lc.last_time:
        raise LifecycleError(f"{lc.site_id}: time went backwards ({t} < {lc.last_time})")
    events: list[LifecycleEvent] = []
    changed = curtailed != lc.last_signal
    lc = _advance(lc, params, t, inclusive=not changed, events=events)
    s = lc.state
    if changed:
        if curtailed:
            if isinstance(s, Offline):
                s = ArmingUp(t)
            elif isinstance(s, ArmingDown):
                s = Active(s.active_since)
        else:
            if isinstance(s, ArmingUp):
                s = Offline()
            elif isinstance(s, Active):
                s = ArmingDown(t, s.since)
    lc = replace(lc, state=s, last_signal=curtailed, last_time=t)
    lc = _advance(lc, params, t, inclusive=True, events=events)
    return lc, events


def begin_drain(lc: SiteLifecycle, t: int) -> SiteLifecycle:
    if not isinstance(lc.state, (Active, ArmingDown)):
        raise LifecycleError(f"{lc.site_id}: cannot drain from {type(lc.state).__name__}")
    if lc.last_time is not None and t < lc.last_time:
        raise LifecycleError(f"{lc.site_id}: time went backwards ({t} < {lc.last_time})")
    return replace(lc, state=Draining(t), last_time=t)


def complete_drain(
    lc: SiteLifecycle, params: HysteresisParams, t: int
) -> tuple[SiteLifecycle, list[LifecycleEvent]]:
    """Finish a drain: the site goes offline and re-arms if the signal is high."""
    if not isinstance(lc.state, Draining):
        raise LifecycleError(f"{lc.site_id}: complete_drain from {type(lc.state).__name__}")
    if t < lc.state.since:
        raise LifecycleError(f"{lc.site_id}: drain cannot finish before it started")
    events = [LifecycleEvent(t, lc.site_id, DRAIN_COMPLETE), LifecycleEvent(t, lc.site_id, SITE_OFFLINE)]
    state: State = ArmingUp(t) if lc.last_signal else Offline()
    lc = replace(lc, state=state, last_time=t)
    lc = _advance(lc, params, t, inclusive=True, events=events)
    return lc, events

"""Scenario files: a flat INI dialect read with :mod:`configparser`.

Sections (all but ``[sites.<id>]`` optional)::

    [scenario]     name, epoch, horizon, seed, policy, idle_power_fraction
    [hysteresis]   tau_up, tau_down, provision_delay          (seconds)
    [rounds]       delta_round, overhead_serialize, overhead_setup_teardown
    [shards]       count, size
    [trainer]      kind, steps_per_second, micro_batch_rows, grad_accum,
                   local_ranks, learning_rate, dim, noise_scale
    [curtailment]  threshold                                   (gCO2/kWh)
    [sites.<id>]   region, power_kw, weight, plus any [trainer] key
    [failures]     <site_id> = <round index>[, <round index> ...]

``seed`` also seeds the synthetic training data of every site.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import fields

from .accounting import SitePowerModel
from .coordinator import RoundConfig
from .provisioner import HysteresisParams
from .sim import CURTAILMENT, Scenario, SiteSpec
from .trace import CurtailmentConfig
from .trainer import TrainerSpec

_TRAINER_KEYS = {f.name: f.type for f in fields(TrainerSpec) if f.name != "data_seed"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("\n".join(problems))
        self.problems = problems


def _reader() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # site ids are case-sensitive
    return cp


def _convert(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


class _Fields:
    """Typed access to one section that records problems instead of raising."""

    def __init__(self, cp: configparser.ConfigParser, section: str, problems: list[str]) -> None:
        self.sec = cp[section] if cp.has_section(section) else {}
        self.name = section
        self.problems = problems

    def get(self, key: str, kind: str, default):
        if key not in self.sec:
            return default
        try:
            return _convert(kind, self.sec[key])
        except ValueError:
            self.problems.append(f"{self.name}.{key}: expected {kind}, got {self.sec[key]!r}")
            return default


def _build(problems: list[str], label: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        problems.append(f"{label}: {exc}")
        return None


def parse_scenario(text: str, horizon: int | None = None, seed: int | None = None) -> Scenario:
    cp = _reader()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    problems: list[str] = []

    sc = _Fields(cp, "scenario", problems)
    hy = _Fields(cp, "hysteresis", problems)
    hyst = _build(
        problems,
        "hysteresis",
        HysteresisParams,
        tau_up=hy.get("tau_up", "int", 10),
        tau_down=hy.get("tau_down", "int", 600),
        provision_delay=hy.get("provision_delay", "int", 300),
    )

    ro = _Fields(cp, "rounds", problems)
    rounds = _build(
        problems,
        "rounds",
        RoundConfig,
        delta_round=ro.get("delta_round", "int", 600),
        overhead_serialize=ro.get("overhead_serialize", "int", 60),
        overhead_setup_teardown=ro.get("overhead_setup_teardown", "int", 55),
    )
    cu = _Fields(cp, "curtailment", problems)
    curt = _build(problems, "curtailment.threshold", CurtailmentConfig, threshold=cu.get("threshold", "float", 100.0))

    sh = _Fields(cp, "shards", problems)
    num_shards = sh.get("count", "int", 16)
    shard_size = sh.get("size", "int", 4096)

    run_seed = sc.get("seed", "int", 0) if seed is None else seed
    tr = _Fields(cp, "trainer", problems)
    base = {k: tr.get(k, t, getattr(TrainerSpec, k)) for k, t in _TRAINER_KEYS.items()}
    base["data_seed"] = run_seed

    sites = []
    for section in cp.sections():
        if not section.startswith("sites."):
            continue
        site_id = section[len("sites."):]
        f = _Fields(cp, section, problems)
        region = f.get("region", "str", None)
        if not region:
            problems.append(f"{section}.region: missing")
            continue
        power = _build(problems, f"{section}.power_kw", SitePowerModel, site_id=site_id, power_kw=f.get("power_kw", "float", 1.0))
        kw = dict(base)
        for k, t in _TRAINER_KEYS.items():
            kw[k] = f.get(k, t, kw[k])
        trainer = _build(problems, f"{section} trainer", TrainerSpec, **kw)
        weight = f.get("weight", "int", 1)
        if weight < 1:
            problems.append(f"{section}.weight: must be >= 1")
        if power and trainer:
            sites.append(SiteSpec(site_id, region, power, trainer, weight))
        unknown = set(f.sec) - set(_TRAINER_KEYS) - {"region", "power_kw", "weight"}
        for k in sorted(unknown):
            problems.append(f"{section}.{k}: unknown key")
    if not any(s.startswith("sites.") for s in cp.sections()):
        problems.append("sites: at least one [sites.<id>] section is required")

    failures = []
    if cp.has_section("failures"):
        for site_id, raw in cp["failures"].items():
            try:
                failures += [(site_id, int(x)) for x in raw.split(",") if x.strip()]
            except ValueError:
                problems.append(f"failures.{site_id}: expected round indices, got {raw!r}")

    allowed = {
        "scenario": {"name", "epoch", "horizon", "seed", "policy", "idle_power_fraction"},
        "hysteresis": {"tau_up", "tau_down", "provision_delay"},
        "rounds": {"delta_round", "overhead_serialize", "overhead_setup_teardown"},
        "shards": {"count", "size"},
        "trainer": set(_TRAINER_KEYS),
        "curtailment": {"threshold"},
    }
    for section in cp.sections():
        if section in allowed:
            problems += [f"{section}.{k}: unknown key" for k in sorted(set(cp[section]) - allowed[section])]
        elif section != "failures" and not section.startswith("sites."):
            problems.append(f"{section}: unknown section")

    if problems:
        raise ConfigError(problems)
    try:
        return Scenario(
            sites=tuple(sites),
            horizon=sc.get("horizon", "int", 86400) if horizon is None else horizon,
            num_shards=num_shards,
            shard_size=shard_size,
            hysteresis=hyst,
            rounds=rounds,
            curtailment=curt,
            seed=run_seed,
            epoch=sc.get("epoch", "str", "1970-01-01T00:00:00+00:00"),
            policy=sc.get("policy", "str", CURTAILMENT),
            idle_power_fraction=sc.get("idle_power_fraction", "float", 1.0),
            failures=tuple(failures),
            name=sc.get("name", "str", ""),
        )
    except ValueError as exc:
        raise ConfigError([f"scenario: {exc}"]) from None


def load_scenario(path, horizon: int | None = None, seed: int | None = None) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), horizon=horizon, seed=seed)


def dump_scenario(s: Scenario) -> str:
    """Resolved scenario, defaults included; parses back to an equal value."""
    cp = _reader()
    cp["scenario"] = {
        "name": s.name,
        "epoch": s.epoch,
        "horizon": str(s.horizon),
        "seed": str(s.seed),
        "policy": s.policy,
        "idle_power_fraction": repr(s.idle_power_fraction),
    }
    cp["hysteresis"] = {k: str(getattr(s.hysteresis, k)) for k in ("tau_up", "tau_down", "provision_delay")}
    cp["rounds"] = {
        k: str(getattr(s.rounds, k)) for k in ("delta_round", "overhead_serialize", "overhead_setup_teardown")
    }
    cp["shards"] = {"count": str(s.num_shards), "size": str(s.shard_size)}
    cp["curtailment"] = {"threshold": repr(s.curtailment.threshold)}
    for site in sorted(s.sites, key=lambda x: x.site_id):
        sec = {"region": site.region_id, "power_kw": repr(site.power.power_kw), "weight": str(site.weight)}
        for k in _TRAINER_KEYS:
            v = getattr(site.trainer, k)
            sec[k] = repr(v) if isinstance(v, float) else str(v)
        cp[f"sites.{site.site_id}"] = sec
    if s.failures:
        by_site: dict[str, list[str]] = {}
        for site_id, r in s.failures:
            by_site.setdefault(site_id, []).append(str(r))
        cp["failures"] = {k: ", ".join(v) for k, v in sorted(by_site.items())}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

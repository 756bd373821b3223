from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curtailfl.config import ConfigError, dump_scenario, load_scenario, parse_scenario
from scenario_gen import random_scenario

MINIMAL = """
[scenario]
horizon = 3600
seed = 4

[sites.CA]
region = CAISO_NORTH
power_kw = 2.5
"""


def sorted_sites(sc):
    return replace(sc, sites=tuple(sorted(sc.sites, key=lambda s: s.site_id)))


def test_minimal_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.horizon == 3600 and sc.seed == 4
    assert sc.hysteresis.tau_up == 10 and sc.rounds.budget == 485
    (ca,) = sc.sites
    assert ca.site_id == "CA" and ca.power.power_kw == 2.5 and ca.trainer.data_seed == 4


def test_overrides():
    sc = parse_scenario(MINIMAL, horizon=99, seed=7)
    assert sc.horizon == 99 and sc.seed == 7 and sc.sites[0].trainer.data_seed == 7


def test_site_trainer_override_and_failures():
    text = MINIMAL + "steps_per_second = 0.9\n\n[sites.SA]\nregion = SA\n\n[failures]\nSA = 0, 3\n"
    sc = parse_scenario(text)
    assert sc.site("CA").trainer.steps_per_second == 0.9
    assert sc.site("SA").trainer.steps_per_second == 0.45
    assert sc.failures == (("SA", 0), ("SA", 3))


@pytest.mark.parametrize(
    "extra, fragment",
    [
        ("[hysteresis]\ntau_up = -1\n", "tau_up"),
        ("[hysteresis]\ntau_down = soon\n", "hysteresis.tau_down"),
        ("[rounds]\ndelta_round = 100\n", "delta_round"),
        ("[trainer]\nkind = magic\n", "kind"),
        ("[trainer]\nbogus = 1\n", "trainer.bogus: unknown key"),
        ("[hysteresis]\ntau = 1\n", "hysteresis.tau: unknown key"),
        ("[extra]\nx = 1\n", "extra: unknown section"),
        ("[sites.TX]\npower_kw = 1\n", "sites.TX.region"),
        ("[sites.TX]\nregion = SPP_TX\npower_kw = -2\n", "power_kw"),
        ("[sites.TX]\nregion = SPP_TX\ncolour = red\n", "sites.TX.colour: unknown key"),
        ("[failures]\nCA = first\n", "failures.CA"),
    ],
)
def test_errors_name_the_field(extra, fragment):
    text = MINIMAL + "\n" + extra
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text)
    assert any(fragment in p for p in exc.value.problems), exc.value.problems


def test_no_sites():
    with pytest.raises(ConfigError, match="at least one"):
        parse_scenario("[scenario]\nhorizon = 10\n")


def test_syntax_error():
    with pytest.raises(ConfigError, match="syntax"):
        parse_scenario("not an ini file")


def test_problems_are_collected():
    with pytest.raises(ConfigError) as exc:
        parse_scenario(MINIMAL + "[hysteresis]\ntau_up = -1\n[extra]\n")
    assert len(exc.value.problems) == 2


@pytest.mark.parametrize("name", ["curtailment_aware", "centralized", "federated_2site", "convergence_centralized", "convergence_curtailment"])
def test_demo_scenarios_roundtrip(demo_dir, name):
    sc = load_scenario(demo_dir / "scenarios" / f"{name}.ini")
    assert sorted_sites(parse_scenario(dump_scenario(sc))) == sorted_sites(sc)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_dump_roundtrip_random(seed, failures):
    sc, _ = random_scenario(seed, failures)
    assert sorted_sites(parse_scenario(dump_scenario(sc))) == sorted_sites(sc)

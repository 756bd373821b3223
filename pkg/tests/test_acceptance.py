"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import math
import random
import time
from collections import Counter
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from curtailfl import cli
from curtailfl.accounting import EnergyLedger, SitePowerModel, record_interval
from curtailfl.config import load_scenario
from curtailfl.coordinator import aggregate
from curtailfl.provisioner import HysteresisParams
from curtailfl.replay import replay_check
from curtailfl.sim import Scenario, Simulation, SiteSpec, run
from curtailfl.trace import CarbonTrace, CurtailmentConfig, load_traces
from curtailfl.trainer import ModelState, SiteUpdate, TrainerSpec, corpus_objective, generate_rows, gradient, objective
from scenario_gen import random_scenario

GOLDEN = Path(__file__).parent / "golden" / "curtailment_aware_events.jsonl"
EPOCH = datetime(2026, 1, 11, 17, 0, tzinfo=timezone.utc)


def clock(h, m, s=0):
    """Seconds after the 17:00 UTC epoch for a wall-clock time."""
    return ((h - 17) % 24) * 3600 + m * 60 + s


@pytest.fixture(scope="module")
def traces(demo_dir):
    return load_traces(demo_dir / "traces", EPOCH)


def scenario(demo_dir, name, **kw):
    return load_scenario(demo_dir / "scenarios" / f"{name}.ini", **kw)


def report(line):
    print(f"\n  {line}")


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            report(f"runtime {self.elapsed:.2f} s (limit {self.limit} s)")
            assert self.elapsed < self.limit


# -- 1 ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "utilization: 485/600 training fraction, 218-222 steps per round")
def test_c1_utilization(demo_dir, traces):
    sc = scenario(demo_dir, "federated_2site")
    with Timer(1.0):
        res = run(sc, traces)
    starts = {e.payload["round"]: e for e in res.events.of_kind("RoundStart")}
    full = []
    for c in res.events.of_kind("RoundCommit"):
        s = starts[c.payload["round"]]
        if c.t - s.t == sc.rounds.delta_round:
            secs = c.payload["train_seconds"]
            full.append((sum(secs.values()) / (sc.rounds.delta_round * len(secs)), list(c.payload["steps"].values())))
    # the last round closes early once the data runs out, so it is not a full round
    assert len(full) == len(starts) - 1 >= 50
    fractions = {round(f, 12) for f, _ in full}
    steps = {s for _, ss in full for s in ss}
    report(f"{len(full)} full rounds, fraction {fractions}, steps per site {steps}")
    assert all(abs(f - 485 / 600) <= 1e-3 for f, _ in full)
    assert all(218 <= s <= 222 for s in steps)


# -- 2 ---------------------------------------------------------------------------


def key_sequence(log):
    """Lifecycle and mode events of the demo run, in log order."""
    out = []
    for e in log:
        if e.kind in ("ProvisionRequested", "SiteReady", "DeprovisionRequested", "SiteOffline"):
            out.append((e.t, e.kind, e.payload["site"]))
        elif e.kind == "ModeChange":
            out.append((e.t, "ModeChange", e.payload["mode"] + ":" + ",".join(e.payload["sites"])))
        elif e.kind == "RunComplete":
            out.append((e.t, "RunComplete", e.payload["reason"]))
    return out


# hand-traced from the demo windows with tau_up=10, tau_down=600, delay=300, 600 s rounds
EXPECTED_TIMELINE = [
    (clock(17, 5, 10), "ProvisionRequested", "CA"),
    (clock(17, 10, 10), "SiteReady", "CA"),
    (clock(17, 10, 10), "ModeChange", "solo:CA"),
    (clock(19, 10), "DeprovisionRequested", "CA"),
    (clock(19, 10), "ModeChange", "idle:"),
    (clock(19, 10), "SiteOffline", "CA"),
    (clock(19, 15, 10), "ProvisionRequested", "CA"),
    (clock(19, 20, 10), "SiteReady", "CA"),
    (clock(19, 20, 10), "ModeChange", "solo:CA"),
    (clock(21, 40, 10), "ProvisionRequested", "SA"),
    (clock(21, 45, 10), "SiteReady", "SA"),
    (clock(21, 45, 10), "ModeChange", "federated:CA,SA"),
    (clock(23, 35), "DeprovisionRequested", "CA"),
    (clock(23, 35), "SiteOffline", "CA"),
    (clock(23, 35, 10), "ModeChange", "solo:SA"),
    (clock(3, 20, 10), "ProvisionRequested", "TX"),
    (clock(3, 25, 10), "SiteReady", "TX"),
    (clock(3, 25, 10), "ModeChange", "federated:SA,TX"),
]


@pytest.mark.criterion(2, "timeline: narrated event sequence and golden event log")
def test_c2_timeline(demo_dir, traces):
    sc = scenario(demo_dir, "curtailment_aware")
    with Timer(5.0):
        res = run(sc, traces)
    seq = key_sequence(res.events)
    report("\n  ".join(f"{t:>6}  {k:<20} {who}" for t, k, who in seq))
    assert seq[: len(EXPECTED_TIMELINE)] == EXPECTED_TIMELINE
    # the 5-minute dips at 04:10 (SA) and 06:00 (TX) are shorter than tau_down
    done = seq[-1]
    assert done[1:] == ("RunComplete", "work_done") and clock(3, 25) < done[0] < clock(9, 20)
    assert seq[len(EXPECTED_TIMELINE):-1] == []
    assert res.events.to_jsonl() == GOLDEN.read_text(encoding="utf-8")


# -- 3 ---------------------------------------------------------------------------


def exact_fedavg(bs, thetas):
    """Weighted average in exact rationals."""
    total = sum(bs)
    return [sum(Fraction(b, total) * Fraction(t[i]) for b, t in zip(bs, thetas)) for i in range(len(thetas[0]))]


@pytest.mark.criterion(3, "aggregation: work-weighted averaging property suite")
def test_c3_aggregation():
    rng = random.Random(3)
    with Timer(5.0):
        for inst in range(1000):
            n = rng.randint(1, 6)
            dim = rng.randint(1, 8)
            bs = [rng.randint(0, 500) for _ in range(n)]
            if sum(bs) == 0:
                bs[0] = 1
            thetas = [[rng.uniform(-1e3, 1e3) for _ in range(dim)] for _ in range(n)]
            ups = [SiteUpdate(f"s{i:02d}", ModelState(np.array(t)), b) for i, (b, t) in enumerate(zip(bs, thetas))]
            got = aggregate(ups).params
            want = exact_fedavg(bs, thetas)
            scale = max(abs(x) for t in thetas for x in t)
            for g, w in zip(got, want):
                assert abs(Fraction(g) - w) <= Fraction(1e-12) * Fraction(scale)
            used = np.array([t for b, t in zip(bs, thetas) if b > 0])
            assert np.all(got >= used.min(axis=0) - 1e-12 * scale) and np.all(got <= used.max(axis=0) + 1e-12 * scale)
            weights = [b / sum(bs) for b in bs]
            assert abs(math.fsum(weights) - 1.0) <= 1e-12
            single = aggregate([SiteUpdate("a", ModelState(np.array(thetas[0])), bs[0] or 1)])
            assert np.array_equal(single.params, np.array(thetas[0]))
            if n >= 2:
                equal = aggregate([SiteUpdate(f"s{i}", ModelState(np.array(t)), 7) for i, t in enumerate(thetas)]).params
                assert np.allclose(equal, np.mean(np.array(thetas), axis=0), rtol=1e-12, atol=1e-12 * scale)
    report("1000 instances checked against exact rational averaging")


# -- 4 / 5 -------------------------------------------------------------------------


def counts_of(consumed):
    return Counter((j, r) for j, a, b in consumed for r in range(a, b))


@pytest.mark.criterion(4, "exactly-once consumption over 200 random scenarios")
def test_c4_exactly_once():
    hits = 0
    with Timer(60.0):
        for seed in range(200):
            sc, tr = random_scenario(seed)
            assert 1 <= len(sc.sites) <= 4 and sc.num_shards <= 64
            consumed = []
            res = run(sc, tr, consumed)
            assert res.reason == "work_done", seed
            c = counts_of(consumed)
            assert len(c) == sc.num_shards * sc.shard_size and set(c.values()) == {1}, seed

            sc, tr = random_scenario(seed, failures=True)
            consumed = []
            sim = Simulation(sc, tr, consumed)
            res = sim.run()
            assert res.reason == "work_done", seed
            assert len(counts_of(consumed)) == sc.num_shards * sc.shard_size, seed
            hist = [p for _, p in sim.history]
            for a, b in zip(hist, hist[1:]):
                assert all(x <= y for x, y in zip(a, b)), seed
            hits += any(e.payload["failed"] for e in res.events.of_kind("RoundCommit"))
    report(f"200 failure-free runs exactly once; {hits} of 200 injected failures fired")
    assert hits >= 20


def excursion_trace(rng, width, n, pulses):
    """``n`` excursions of ``width`` seconds away from a steady signal.

    ``pulses`` puts curtailed pulses on a dirty grid; otherwise the grid is
    curtailed and the excursions are dirty gaps, after a lead-in long enough
    for the site to come up.
    """
    base, away = (400.0, 40.0) if pulses else (40.0, 400.0)
    samples = [(0, base)]
    t = 0 if pulses else rng.randint(2000, 5000)
    for _ in range(n):
        t += rng.randint(1, 3000)
        samples.append((t, away))
        t += width
        samples.append((t, base))
    return CarbonTrace.from_samples("R", samples), t + rng.randint(1, 3000)


def lifecycle_counts(rng, hp, width, n, pulses):
    trace, end = excursion_trace(rng, width, n, pulses)
    site = SiteSpec("A", "R", SitePowerModel("A", 1.0), TrainerSpec())
    sc = Scenario(sites=(site,), horizon=end, num_shards=64, shard_size=10**6, hysteresis=hp)
    log = run(sc, {"R": trace}).events
    assert replay_check(log, sc, {"R": trace}).ok
    if not pulses:
        assert log.of_kind("SiteReady")  # gaps must hit a live site
    return len(log.of_kind("ProvisionRequested" if pulses else "DeprovisionRequested"))


@pytest.mark.criterion(5, "hysteresis debounce: replay_check and pulse/gap fuzzing")
def test_c5_debounce():
    with Timer(30.0):
        for seed in range(200):
            for failures in (False, True):
                sc, tr = random_scenario(seed, failures)
                v = replay_check(run(sc, tr).events, sc, tr)
                assert v.ok, (seed, failures, v)
        rng = random.Random(5)
        short = {True: 0, False: 0}
        for case in range(200):
            hp = HysteresisParams(rng.randint(2, 120), rng.randint(2, 1200), rng.randint(0, 600))
            pulses = case % 2 == 0
            tau = hp.tau_up if pulses else hp.tau_down
            n = rng.randint(1, 30)
            state = rng.getstate()
            short[pulses] += lifecycle_counts(rng, hp, tau - 1, n, pulses)
            # control: the same trace with excursions one second longer must trigger
            rng.setstate(state)
            assert lifecycle_counts(rng, hp, tau + 1, n, pulses) >= 1, case
    report(f"400 random logs clean; short pulses gave {short[True]} provisions, short gaps {short[False]} deprovisions")
    assert short == {True: 0, False: 0}


# -- 6 ---------------------------------------------------------------------------


@pytest.mark.criterion(6, "accounting: closed-form integrals and tau_down overrun fraction")
def test_c6_accounting():
    cfg = CurtailmentConfig()
    rng = random.Random(6)
    with Timer(5.0):
        for _ in range(300):
            times = sorted(rng.sample(range(1, 20000), rng.randint(0, 8)))
            samples = [(0, float(rng.randint(0, 400)))] + [(t, float(rng.randint(0, 400))) for t in times]
            trace = CarbonTrace.from_samples("R", samples)
            power = rng.choice([0.5, 1.0, 2.0, 3.3])
            a = rng.randint(0, 15000)
            b = a + rng.randint(1, 15000)
            led = record_interval(EnergyLedger(), "A", a, b, trace, cfg, power)
            bounds = [s for s, _ in samples] + [math.inf]
            want = Fraction(0)
            for (s, m), nxt in zip(samples, bounds[1:]):
                lo, hi = max(a, s), min(b, nxt)
                if hi > lo:
                    want += Fraction(power) * Fraction(int(hi - lo), 3600) * Fraction(m)
            got = math.fsum(iv.emissions_g for iv in led.intervals)
            assert math.isclose(got, float(want), rel_tol=1e-9, abs_tol=1e-12)

        # one site, one window [1000, 8200); the only dirty draw is the tau_down tail
        window_start, window_end, hp = 1000, 8200, HysteresisParams()
        trace = CarbonTrace.from_samples("R", [(0, 300.0), (window_start, 40.0), (window_end, 400.0)])
        site = SiteSpec("A", "R", SitePowerModel("A", 2.0), TrainerSpec())
        sc = Scenario(sites=(site,), horizon=20000, num_shards=64, shard_size=64300, hysteresis=hp)
        res = run(sc, {"R": trace})
    on = window_start + hp.tau_up
    off = window_end + hp.tau_down
    spec = site.trainer
    ready = on + hp.provision_delay
    steps = math.floor(Fraction(off - ready) * spec.rate)
    overrun = max(0, ready + math.ceil(Fraction(steps) / spec.rate) - off)
    closed = Fraction(window_end - on, off + overrun - on)
    rep = res.report
    dirty = [iv for iv in res.ledger.intervals if not iv.curtailed]
    assert all(window_end <= iv.start and iv.end <= off + overrun for iv in dirty)
    report(f"curtailed_fraction {rep.curtailed_fraction!r} vs closed form {float(closed)!r} ({closed})")
    assert math.isclose(rep.curtailed_fraction, float(closed), rel_tol=4 * 2**-52)
    emissions = 2 * Fraction(window_end - on, 3600) * 40 + 2 * Fraction(off + overrun - window_end, 3600) * 400
    assert math.isclose(rep.total_emissions_g, float(emissions), rel_tol=1e-9)


# -- 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "convergence: curtailment-aware objective within 10% of centralized")
def test_c7_convergence(demo_dir, traces):
    with Timer(120.0):
        cen = scenario(demo_dir, "convergence_centralized")
        cur = scenario(demo_dir, "convergence_curtailment")
        spec = cen.sites[0].trainer
        assert (spec.dim, cen.num_shards, cen.shard_size, spec.noise_scale) == (32, 16, 4096, 0.0)
        rc, ra = run(cen, traces), run(cur, traces)
    assert rc.report.rows_total == ra.report.rows_total == 16 * 4096
    assert ra.rounds and ra.events.of_kind("SoloCommit")  # both regimes are exercised
    f0 = corpus_objective(ModelState.zeros(spec.dim), spec, rc.table)
    fc = corpus_objective(rc.model, spec, rc.table)
    fa = corpus_objective(ra.model, spec, ra.table)
    report(f"f_init {f0:.4f}  centralized {fc:.5f} ({fc / f0:.4f} f_init)  curtailment-aware {fa:.5f} ({fa / f0:.4f} f_init)")
    report(f"relative gap {abs(fa - fc) / fc:.3f} with {len(ra.rounds)} federated rounds")
    assert fc <= 0.05 * f0 and fa <= 0.05 * f0
    assert abs(fa - fc) <= 0.10 * fc


# -- 8 ---------------------------------------------------------------------------


@pytest.mark.criterion(8, "emissions: curtailment-aware below 25% of the always-on baseline")
def test_c8_emissions(demo_dir, traces):
    with Timer(10.0):
        aware = run(scenario(demo_dir, "curtailment_aware"), traces).report
        base = run(scenario(demo_dir, "centralized"), traces).report
    for tr in traces.values():
        for _, m in tr.samples:
            assert m <= 50 or m >= 300
    ratio = aware.total_emissions_g / base.total_emissions_g
    report(f"{aware.total_emissions_g:.0f} g vs {base.total_emissions_g:.0f} g, ratio {ratio:.3f}")
    assert ratio < 0.25


# -- 9 ---------------------------------------------------------------------------


@pytest.mark.criterion(9, "determinism: byte-identical artifacts from two runs")
def test_c9_determinism(demo_dir, tmp_path):
    names = ("events.jsonl", "summary.csv", "model.bin")
    with Timer(10.0):
        for scen in ("curtailment_aware", "convergence_curtailment"):
            outs = []
            for k in range(2):
                out = tmp_path / f"{scen}-{k}"
                argv = ["run", "--scenario", str(demo_dir / "scenarios" / f"{scen}.ini"), "--traces", str(demo_dir / "traces"), "--out", str(out)]
                assert cli.main(argv) == 0
                outs.append(out)
            for n in names:
                assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), (scen, n)
    report("events.jsonl, summary.csv and model.bin identical for the demo and a numeric scenario")


# -- 10 --------------------------------------------------------------------------


@pytest.mark.criterion(10, "gradient oracle: central finite differences within 1e-5")
def test_c10_gradient():
    rng = np.random.default_rng(10)
    with Timer(1.0):
        x, y = generate_rows(10, 0, 0, 64, 32, 0.1)
        worst = 0.0
        for _ in range(3):
            theta = rng.normal(size=32)
            g = gradient(theta, x, y)
            h = 1e-6
            fd = np.array([(objective(theta + h * e, x, y) - objective(theta - h * e, x, y)) / (2 * h) for e in np.eye(32)])
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    report(f"worst relative error {worst:.2e}")
    assert worst <= 1e-5

import json
import random

import pytest
from hypothesis import given, strategies as st

from amsa.controller import (
    FIXED,
    WEIGHTED,
    EvaluationReport,
    PortfolioConfig,
    Runner,
    allocate,
    chain_roi,
    evaluate_grid,
    period_bounds,
    run_walk_forward,
)
from amsa.errors import InsufficientData, InvalidNav, InvalidParams, MissingAssetData
from amsa.marketdata import SynthParams, synth_data
from amsa.strategy import GridConfig, OracleSpec, StrategySpec, run_strategy, strategy_grid

SPECS = tuple(strategy_grid(GridConfig(spreads=(0.1, 0.5), thresholds=(0, 1), refresh_secs=(3600,), hodl=True)))


@pytest.fixture(scope="module")
def small_market():
    return {f"A{i}": synth_data(100 + i, SynthParams(days=4, volatility=0.03, trade_rate=1.0)) for i in range(3)}


@pytest.fixture(scope="module")
def deep_market():
    # trades far larger than any order: every crossing fills completely
    p = SynthParams(days=4, volatility=0.03, trade_rate=1.0, trade_size=1e9)
    return {"X": synth_data(7, p), "Y": synth_data(8, p)}


def report(entries):
    return EvaluationReport(1, dict(sorted(entries.items())))


# -- allocation ---------------------------------------------------------------

def test_allocate_weighted_example():
    g = allocate(report({("A", "s"): 0.02, ("B", "s"): 0.01, ("C", "s"): -0.01}), WEIGHTED)
    assert g.weights == pytest.approx({("A", "s"): 2 / 3, ("B", "s"): 1 / 3}, abs=1e-15)


def test_allocate_fixed_example():
    g = allocate(report({("A", "s"): 0.02, ("B", "s"): 0.01, ("C", "s"): -0.01}), FIXED)
    assert g.weights == {("A", "s"): 0.5, ("B", "s"): 0.5}


def test_allocate_empty():
    assert allocate(report({("A", "s"): 0.0, ("B", "s"): -0.1}), WEIGHTED).weights == {}
    assert allocate(report({}), FIXED).weights == {}


def test_allocate_unknown_policy():
    with pytest.raises(InvalidParams):
        allocate(report({("A", "s"): 0.1}), "greedy")


rois = st.dictionaries(st.tuples(st.sampled_from("ABCDE"), st.sampled_from(["s1", "s2", "s3"])),
                       st.floats(-1.0, 5.0, allow_nan=False), max_size=15)


@given(rois, st.sampled_from([FIXED, WEIGHTED]))
def test_allocate_properties(entries, policy):
    w = allocate(report(entries), policy).weights
    positive = {k for k, r in entries.items() if r > 0}
    assert set(w) == positive
    assert all(v > 0 for v in w.values())
    if w:
        assert abs(sum(w.values()) - 1) <= 1e-12
    if policy == WEIGHTED and len(w) > 1:
        keys = sorted(w)
        for a in keys:
            for b in keys:
                assert (w[a] > w[b]) == (entries[a] > entries[b]) or w[a] == w[b]


@given(rois, st.sampled_from([FIXED, WEIGHTED]), st.randoms())
def test_allocate_order_independent(entries, policy, rnd):
    items = list(entries.items())
    rnd.shuffle(items)
    a = allocate(EvaluationReport(1, dict(items)), policy).weights
    b = allocate(report(entries), policy).weights
    assert a == b


# -- chain ROI ----------------------------------------------------------------

@pytest.mark.parametrize("nav, expected", [([100, 110, 99], -0.01), ([100, 100], 0.0), ([1000, 1200], 0.2)])
def test_chain_roi_examples(nav, expected):
    assert chain_roi(nav) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("nav", [[100], [], [100, 0], [100, -5, 10]])
def test_chain_roi_invalid(nav):
    with pytest.raises(InvalidNav):
        chain_roi(nav)


@given(st.lists(st.floats(0.5, 2.0), min_size=1, max_size=30))
def test_chain_roi_is_product_of_period_returns(factors):
    nav = [100.0]
    for f in factors:
        nav.append(nav[-1] * f)
    prod = 1.0
    for a, b in zip(nav, nav[1:]):
        prod *= b / a
    assert chain_roi(nav) == pytest.approx(prod - 1, rel=1e-9, abs=1e-12)


# -- grid evaluation ----------------------------------------------------------

def test_evaluate_grid_covers_all_combinations(small_market):
    d = small_market["A0"]
    with Runner(small_market, {"maker": 0.001, "taker": 0.001}, OracleSpec()) as runner:
        rep = evaluate_grid(list(small_market), SPECS, d.start, d.start + 86_400_000, runner)
    assert len(rep.entries) == 3 * len(SPECS)
    assert list(rep.entries) == sorted(rep.entries)
    # each entry equals an independent direct run
    for (asset, sid), roi in rep.entries.items():
        spec = StrategySpec.from_id(sid)
        w = small_market[asset].window(d.start, d.start + 86_400_000)
        assert run_strategy(spec, w, 1000.0).roi == roi


def test_evaluate_grid_serial_matches_parallel(small_market):
    d = small_market["A0"]
    fees = {"maker": 0.001, "taker": 0.001}
    with Runner(small_market, fees, OracleSpec()) as r1:
        a = evaluate_grid(list(small_market), SPECS, d.start, d.end, r1)
    with Runner(small_market, fees, OracleSpec(), jobs=2) as r2:
        b = evaluate_grid(list(small_market), SPECS, d.start, d.end, r2)
    assert list(a.entries.items()) == list(b.entries.items())


def test_evaluate_grid_missing_asset(small_market):
    with Runner(small_market, {"maker": 0.001, "taker": 0.001}, OracleSpec()) as runner:
        with pytest.raises(MissingAssetData):
            evaluate_grid(["ZZZ"], SPECS, 0, 1, runner)


# -- walk-forward --------------------------------------------------------------

def cfg(assets, **kw):
    kw.setdefault("period_hours", 24)
    kw.setdefault("specs", SPECS)
    return PortfolioConfig(tuple(assets), **kw)


def test_period_bounds_counts():
    d = synth_data(1, SynthParams(days=90, steps_per_minute=1, trade_rate=0.05, depth_levels=1))
    for hours, n in [(24, 90), (72, 30), (120, 18), (180, 12), (360, 6)]:
        b = period_bounds({"A": d}, ["A"], hours * 3_600_000)
        assert len(b) == n
        assert b[0][0] == d.start and b[-1][1] <= d.end
        assert all(x[1] == y[0] for x, y in zip(b, b[1:]))


def test_period_bounds_insufficient(small_market):
    with pytest.raises(InsufficientData):
        period_bounds(small_market, ["A0"], 72 * 3_600_000)


def test_config_validation():
    with pytest.raises(InvalidParams):
        cfg([])
    with pytest.raises(InvalidParams):
        cfg(["A", "A"])
    with pytest.raises(InvalidParams):
        cfg(["A"], policy="greedy")
    with pytest.raises(InvalidParams):
        cfg(["A"], period_hours=0)
    with pytest.raises(InvalidParams):
        cfg(["A"], specs=())


def brute_force_walk_forward(market, assets, specs, period_ms, capital, policy, notional=1000.0):
    """Direct loop over run_strategy without the controller's runner or allocator."""
    start = max(market[a].start for a in assets)
    end = min(market[a].end for a in assets)
    n = (end - start) // period_ms
    bounds = [(start + i * period_ms, start + (i + 1) * period_ms) for i in range(n)]
    nav = [capital]
    for i, (s, e) in enumerate(bounds):
        if i == 0:
            nav.append(nav[-1])
            continue
        ps, pe = bounds[i - 1]
        ev = {}
        for a in sorted(assets):
            for sp in sorted(specs, key=lambda x: x.id):
                ev[(a, sp)] = run_strategy(sp, market[a].window(ps, pe), notional).roi
        good = {k: r for k, r in ev.items() if r > 0}
        if not good:
            nav.append(nav[-1])
            continue
        tot = sum(good.values())
        value = 0.0
        used = 0.0
        for (a, sp), r in good.items():
            w = 1 / len(good) if policy == FIXED else r / tot
            c = w * nav[-1]
            used += c
            value += run_strategy(sp, market[a].window(s, e), c).final_value
        nav.append(value + (nav[-1] - used))
    return nav


@pytest.mark.parametrize("policy", [FIXED, WEIGHTED])
def test_walk_forward_matches_brute_force(small_market, policy):
    res = run_walk_forward(cfg(small_market, policy=policy), small_market)
    expected = brute_force_walk_forward(small_market, list(small_market), SPECS, 86_400_000, 10_000.0, policy)
    got = [v for _, v in res.nav]
    assert len(got) == 5 and res.n_executed == 3
    assert got == pytest.approx(expected, rel=1e-12)
    assert res.total_roi == pytest.approx(expected[-1] / expected[0] - 1, rel=1e-9, abs=1e-12)


def test_walk_forward_first_period_idle(small_market):
    res = run_walk_forward(cfg(small_market), small_market)
    p0 = res.periods[0]
    assert p0.report is None and p0.allocation.weights == {} and p0.nav_end == p0.nav_start


def test_walk_forward_capital_conservation(small_market):
    res = run_walk_forward(cfg(small_market), small_market)
    for p in res.periods:
        deployed = sum(p.deployed.values())
        assert p.idle >= -1e-9 * p.nav_start
        assert abs(deployed + p.idle - p.nav_start) <= 1e-9 * p.nav_start
        finals = sum(p.deployed[k] * (1 + p.exec_rois[k]) for k in p.deployed)
        assert abs(finals + p.idle - p.nav_end) <= 1e-9 * p.nav_start
    assert [v for _, v in res.nav][1:] == [p.nav_end for p in res.periods]


def test_walk_forward_all_idle(small_market):
    # spreads so wide nothing ever fills: every evaluation ROI is 0, nothing deploys
    specs = (StrategySpec("maker", 50.0, 3600, 0),)
    res = run_walk_forward(cfg(small_market, specs=specs), small_market)
    assert res.total_roi == 0.0
    assert all(not p.deployed for p in res.periods)


def test_walk_forward_capital_scaling_exact(deep_market):
    a = run_walk_forward(cfg(deep_market, initial_capital=5_000.0), deep_market)
    b = run_walk_forward(cfg(deep_market, initial_capital=10_000.0), deep_market)
    assert any(p.deployed for p in a.periods)
    assert [2 * v for _, v in a.nav] == [v for _, v in b.nav]
    assert a.total_roi == b.total_roi


def test_walk_forward_permutation_invariant(small_market):
    base = run_walk_forward(cfg(small_market), small_market).to_json()
    rnd = random.Random(3)
    for _ in range(3):
        assets = list(small_market)
        specs = list(SPECS)
        rnd.shuffle(assets)
        rnd.shuffle(specs)
        assert run_walk_forward(cfg(assets, specs=tuple(specs)), small_market).to_json() == base


def test_walk_forward_single_spec_compounds(small_market):
    spec = StrategySpec("maker", 0.1, 3600, 0)
    market = {"A1": small_market["A1"]}
    res = run_walk_forward(cfg(market, specs=(spec,)), market)
    nav = res.nav[0][1]
    for p in res.periods:
        if p.deployed:
            assert list(p.deployed.values()) == [nav]
            nav = run_strategy(spec, market["A1"].window(p.start, p.end), nav).final_value
        assert p.nav_end == pytest.approx(nav, rel=1e-12)


def test_walk_forward_in_sample(small_market):
    res = run_walk_forward(cfg(small_market, in_sample=True), small_market)
    assert res.n_executed == 4
    for p in res.periods:
        assert set(p.deployed) == {k for k, r in p.report.entries.items() if r > 0}
        a, sid = next(iter(p.report.entries))
        w = small_market[a].window(p.start, p.end)
        assert p.report.entries[(a, sid)] == run_strategy(StrategySpec.from_id(sid), w, 1000.0).roi


def test_walk_forward_jobs_identical(small_market):
    a = run_walk_forward(cfg(small_market), small_market, jobs=1).to_json()
    b = run_walk_forward(cfg(small_market), small_market, jobs=3).to_json()
    assert a == b


def test_result_serialisation(small_market):
    res = run_walk_forward(cfg(small_market), small_market)
    d = json.loads(res.to_json())
    assert len(d["nav"]) == 5 and len(d["periods"]) == 4
    assert d["periods"][0]["evaluation"] is None
    lines = res.summary_csv().splitlines()
    assert lines[0] == "period,asset,spec_id,eval_roi,weight,exec_roi"
    assert len(lines) == 1 + 3 * 3 * len(SPECS)
    assert res.nav_csv().splitlines()[0] == "period,timestamp,nav"

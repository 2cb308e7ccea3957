"""Acceptance criteria on the bundled instances; one PASS/FAIL line per criterion."""
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from storvol import bundled_instance
from storvol.equilibrium import best_response_wind, brute_force_nash, kkt_report, solve_equilibrium
from storvol.io import ResultBundle, emit_results, load_instance, parse_instance
from storvol.market import ScenarioSet, price_variance
from storvol.sizing import (STORAGE_MODES, SweepPlan, VolatilityTarget, minimal_storage_capacity,
                            volatility_at_capacity, volatility_curve)

# relative slack for "weakly below" comparisons between independently solved points
TIE = 1e-9


def _instance(name, **scenario):
    path = bundled_instance(name)
    doc = json.loads(path.read_text())
    doc["scenarios"].update(scenario)
    return parse_instance(doc, path.parent)


@pytest.fixture(scope="module")
def sa_vic_inst():
    return load_instance(bundled_instance("sa_vic"))


@pytest.fixture(scope="module")
def suite(sa_vic_inst):
    """Timed solves spanning the bundled instances, storage modes, capacities and deratings."""
    base = sa_vic_inst.network
    cfg = sa_vic_inst.solver_config()
    cases = []
    for mode in (0, 1):
        for cap in (0.0, 150.0, 490.0, 510.0, 1000.0):
            cases.append((f"sa_vic mode={mode} cap={cap:g}",
                          base.with_storage_mode(mode).with_storage_capacities({"SA": cap}), cfg))
        for d in (0.6, 0.7):
            cases.append((f"sa_vic mode={mode} derating={d}",
                          base.with_storage_mode(mode).with_line_derating(d).with_storage_capacities({"SA": 400.0}),
                          cfg))
    phi4 = _instance("sa_vic", phi=0.4)
    cases.append(("sa_vic phi=0.4 cap=300", phi4.network.with_storage_capacities({"SA": 300.0}), cfg))
    spike = load_instance(bundled_instance("spike4"))
    for mode in (0, 1):
        for cap in (20.0, 90.0):
            cases.append((f"spike4 mode={mode} cap={cap:g}",
                          spike.network.with_storage_mode(mode).with_storage_capacities({"N": cap}),
                          spike.solver_config()))
    for name in ("oracle_storage", "oracle_wind"):
        inst = load_instance(bundled_instance(name))
        cases.append((name, inst.network, inst.solver_config()))
    out = []
    for label, net, config in cases:
        start = time.perf_counter()
        res = solve_equilibrium(net, config)
        out.append((label, net, res, time.perf_counter() - start))
    return out


def test_c01_kkt_validity(suite, criterion):
    with criterion(1, "KKT validity on the bundled suite") as c:
        worst = {"kkt": 0.0, "primal": 0.0, "comp": 0.0, "time": 0.0}
        failures = []
        for label, net, res, secs in suite:
            rep = kkt_report(net, res.profile, res.multipliers)
            if not res.converged:
                failures.append(f"{label}: not converged")
                continue
            worst["kkt"] = max(worst["kkt"], rep.residual)
            worst["primal"] = max(worst["primal"], rep.primal)
            worst["comp"] = max(worst["comp"], rep.complementarity)
            worst["time"] = max(worst["time"], secs)
            if rep.residual > 1e-6 or rep.primal > 1e-8 or rep.complementarity > 1e-8 or secs >= 10:
                failures.append(f"{label}: {rep} in {secs:.1f}s")
        c.detail = (f"{len(suite)} solves; worst kkt {worst['kkt']:.2e}, primal {worst['primal']:.2e}, "
                    f"complementarity {worst['comp']:.2e}, time {worst['time']:.2f}s")
        assert not failures, failures


def test_c02_one_sided_storage(suite, criterion):
    with criterion(2, "storage never charges and discharges at once") as c:
        worst = max(float(np.max(res.profile.q_dis * res.profile.q_ch, initial=0.0)) for _, _, res, _ in suite)
        c.detail = f"max q_dis*q_ch = {worst:.2e}"
        assert worst <= 1e-8


def test_c03_oracle_equivalence(criterion):
    with criterion(3, "solver matches exhaustive grid equilibrium") as c:
        gaps = {}
        for name in ("oracle_storage", "oracle_wind"):
            net = load_instance(bundled_instance(name)).network
            assert net.n_nodes == 1 and len(net.firms) == 2 and net.shape[1:] == (2, 2)
            res = solve_equilibrium(net)
            assert res.converged
            grid = brute_force_nash(net, 0.5)
            gaps[name] = max(float(np.max(np.abs(v - getattr(grid, k))))
                             for k, v in res.profile.arrays().items() if v.size)
        c.detail = ", ".join(f"{n} largest gap {g:.3f} MW" for n, g in gaps.items()) + " (grid 0.5)"
        assert max(gaps.values()) <= 0.5 + 1e-9


def test_c04_wind_closed_form(suite, criterion):
    with criterion(4, "wind output is min(1/beta, availability)") as c:
        rng = np.random.default_rng(4)
        worst = 0.0
        for _, net, res, _ in suite:
            for m, firm in enumerate(net.wind_firms):
                beta = net.demand.beta[net.wind_node[m]][:, None]
                want = np.minimum(1.0 / beta, firm.availability)
                worst = max(worst, float(np.max(np.abs(res.profile.q_wg[m] - want))))
                rival = rng.uniform(-1e3, 1e3, want.shape)
                worst = max(worst, float(np.max(np.abs(best_response_wind(firm, rival, net) - want))))
        c.detail = f"max deviation {worst:.2e} MW"
        assert worst <= 1e-6


def _exact_variance(prices, probs):
    p = [Fraction(x) for x in probs]
    total = sum(p)
    p = [x / total for x in p]
    v = [Fraction(x) for x in prices]
    mean = sum(a * b for a, b in zip(p, v))
    return float(sum(a * (b - mean) ** 2 for a, b in zip(p, v)))


def test_c05_variance_oracle(criterion):
    with criterion(5, "price variance against an independent two-pass oracle") as c:
        assert price_variance(np.array([10.0, 20.0, 30.0]), ScenarioSet(np.array([0.2, 0.6, 0.2]))) == 40.0
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            w = int(rng.integers(2, 7))
            prices = rng.lognormal(4.0, 1.0, w)
            probs = rng.dirichlet(np.ones(w))
            probs /= probs.sum()
            ours = price_variance(prices, probs)
            ref = _exact_variance(prices, probs)
            worst = max(worst, abs(ours - ref) / ref)
        c.detail = f"1000 random cases, worst relative error {worst:.2e}; hand case exact"
        assert worst <= 1e-12


def test_c06_regulated_line_equalises_prices(sa_vic_inst, criterion):
    with criterion(6, "regulated slack line equalises nodal prices") as c:
        net = sa_vic_inst.network.with_line_derating(1.0)
        from dataclasses import replace
        net = replace(net, lines=tuple(replace(l, capacity=1e5) for l in net.lines))
        worst = 0.0
        for cap in (0.0, 300.0):
            res = solve_equilibrium(net.with_storage_capacities({"SA": cap}), sa_vic_inst.solver_config())
            assert res.converged
            P = res.prices
            worst = max(worst, float(np.max(np.abs(P[0] - P[1]) / np.maximum(P[0], P[1]))))
        c.detail = f"max |P_SA - P_VIC| / P = {worst:.2e}"
        assert worst <= 1e-6


@pytest.fixture(scope="module")
def sizing_runs(sa_vic_inst):
    plan = SweepPlan(10, 1000, node="SA")
    target = VolatilityTarget(reduction_pct=80.0)
    out = {}
    for mode in ("regulated", "strategic"):
        start = time.perf_counter()
        net = sa_vic_inst.network.with_storage_mode(STORAGE_MODES[mode])
        out[mode] = (net, minimal_storage_capacity(net, target, plan, sa_vic_inst.solver_config()),
                     time.perf_counter() - start)
    return plan, out


def test_c07_regulated_needs_less_storage(sizing_runs, criterion):
    with criterion(7, "regulated storage meets the 80% cut with no more capacity than strategic") as c:
        _, runs = sizing_runs
        reg, strat = runs["regulated"][1], runs["strategic"][1]
        c.detail = (f"regulated {reg.total:g} MWh ({runs['regulated'][2]:.0f}s), "
                    f"strategic {strat.total:g} MWh ({runs['strategic'][2]:.0f}s)")
        assert reg.feasible and strat.feasible
        assert reg.total <= strat.total
        assert runs["regulated"][2] < 300 and runs["strategic"][2] < 300


@pytest.fixture(scope="module")
def curves(sa_vic_inst):
    plan = SweepPlan(100, 1000, node="SA")
    cfg = sa_vic_inst.solver_config()
    phi4 = _instance("sa_vic", phi=0.4).network
    out = {}
    for mode in ("strategic", "regulated"):
        out[mode, 0.5] = volatility_curve(sa_vic_inst.network, plan, cfg, mode, include_baseline=True)
        out[mode, 0.4] = volatility_curve(phi4, plan, cfg, mode, include_baseline=True)
    return out


def _plateau_from(values):
    """First index after which every successive relative change stays below 1%."""
    changes = np.abs(np.diff(values)) / values[:-1]
    for k in range(len(changes)):
        if np.all(changes[k:] < 0.01):
            return k
    return None


def test_c08_curve_shapes(curves, criterion):
    with criterion(8, "strategic plateau, regulated below strategic, lower phi lowers volatility") as c:
        assert all(p.converged for curve in curves.values() for p in curve)
        strat = np.array([p.sqrt_volatility for p in curves["strategic", 0.5]])
        reg = np.array([p.sqrt_volatility for p in curves["regulated", 0.5]])
        caps = [p.capacity for p in curves["strategic", 0.5]]
        k = _plateau_from(strat)
        below = bool(np.all(reg <= strat * (1 + TIE)))
        ratios = []
        for mode in ("strategic", "regulated"):
            hi = np.array([p.sqrt_volatility for p in curves[mode, 0.5]])
            lo = np.array([p.sqrt_volatility for p in curves[mode, 0.4]])
            ratios.append(float(np.max(lo / hi)))
        c.detail = (f"strategic plateau from {caps[k] if k is not None else None} MWh; "
                    f"regulated <= strategic: {below}; worst phi 0.4/0.5 ratio {max(ratios):.3f}")
        assert k is not None and k < len(strat) - 2
        assert below
        assert max(ratios) < 1.0


def test_regulated_curve_is_monotone(curves):
    vals = np.array([p.max_variance for p in curves["regulated", 0.5]])
    assert np.all(np.diff(vals) <= TIE * vals[:-1])


def test_c09_derating(sa_vic_inst, criterion):
    with criterion(9, "more interconnector capacity weakly lowers volatility") as c:
        vals = []
        for d in (0.0, 0.6, 0.7):
            res = solve_equilibrium(sa_vic_inst.network.with_line_derating(d), sa_vic_inst.solver_config())
            assert res.converged
            vals.append(res.max_variance)
        c.detail = "sqrt max variance " + " -> ".join(f"{v ** 0.5:.1f}" for v in vals) + " at 0/60/70%"
        assert vals[1] <= vals[0] * (1 + TIE) and vals[2] <= vals[1] * (1 + TIE)


def test_c10_sizing_minimality(sizing_runs, spike4, criterion):
    with criterion(10, "one step below every feasible size violates the target") as c:
        plan, runs = sizing_runs
        cases = [(net, res, plan) for net, res, _ in runs.values()]
        small = SweepPlan(10, 200)
        for mode in ("strategic", "regulated"):
            net = spike4.network.with_storage_mode(STORAGE_MODES[mode])
            cases.append((net, minimal_storage_capacity(net, VolatilityTarget(reduction_pct=40.0), small), small))
        checked = []
        for net, res, p in cases:
            if not (res.feasible and res.total > 0):
                continue
            node = next(n for n, v in res.capacities.items() if v > 0)
            below, _ = volatility_at_capacity(net, {node: res.total - p.step})
            at, _ = volatility_at_capacity(net, res.capacities)
            checked.append((net.name, res.total, bool(np.any(below > res.sigma0_sq)), bool(np.all(at <= res.sigma0_sq))))
        c.detail = "; ".join(f"{n} {t:g}: below violates={b}, recheck ok={a}" for n, t, b, a in checked)
        assert checked and all(b and a for _, _, b, a in checked)


def test_c11_determinism(sa_vic_inst, tmp_path, criterion):
    with criterion(11, "identical inputs give byte-identical result tables") as c:
        cfg = sa_vic_inst.solver_config()
        net = sa_vic_inst.network.with_storage_capacities({"SA": 300.0})
        plan, target = SweepPlan(100, 300, node="SA"), VolatilityTarget(reduction_pct=50.0)
        dirs = []
        for run in ("a", "b"):
            res = solve_equilibrium(net, cfg)
            size = minimal_storage_capacity(sa_vic_inst.network, target, plan, cfg)
            curve = volatility_curve(sa_vic_inst.network, plan, cfg, "regulated")
            emit_results(ResultBundle(net, cfg, "solve", equilibrium=res, sizing=size, curve=curve), tmp_path / run)
            dirs.append(tmp_path / run)
        names = sorted(p.name for p in dirs[0].iterdir())
        same = [n for n in names if (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()]
        c.detail = f"{len(same)}/{len(names)} files identical"
        assert same == names and len(names) == 8

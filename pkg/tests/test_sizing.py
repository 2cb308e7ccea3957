import json
import math

import numpy as np
import pytest

from storvol import bundled_instance, sizing
from storvol.equilibrium import SolverConfig, solve_equilibrium
from storvol.io import parse_instance
from storvol.market import ModelError
from storvol.sizing import (STORAGE_MODES, SizingError, SweepPlan, VolatilityTarget, minimal_storage_capacity,
                            volatility_at_capacity, volatility_curve)

from conftest import ClassicalGenerator, StorageFirm, WindFirm, two_node


def _mode(inst, mode):
    return inst.network.with_storage_mode(STORAGE_MODES[mode])


def test_target_and_plan_validation():
    with pytest.raises(ModelError):
        VolatilityTarget()
    with pytest.raises(ModelError):
        VolatilityTarget(10.0, 20.0)
    with pytest.raises(ModelError):
        VolatilityTarget(-1.0)
    with pytest.raises(ModelError):
        VolatilityTarget(reduction_pct=120)
    assert VolatilityTarget(reduction_pct=80).resolve(1000.0) == pytest.approx(200.0)
    assert VolatilityTarget(5.0).resolve(1000.0) == 5.0
    with pytest.raises(ModelError):
        SweepPlan(0, 10)
    with pytest.raises(ModelError):
        SweepPlan(10, 5)
    with pytest.raises(ModelError):
        SweepPlan(10, 50, allocation="random")
    assert SweepPlan(10, 35).n_steps == 3


def test_capacity_zero_is_baseline(spike4):
    net = spike4.network
    var, res = volatility_at_capacity(net, {"N": 0.0})
    base = solve_equilibrium(net)
    np.testing.assert_array_equal(var, base.variance)
    assert not res.profile.q_dis.any()
    with pytest.raises(ModelError):
        volatility_at_capacity(net, {"N": -1.0})


def test_storage_lowers_worst_variance(spike4):
    v0, _ = volatility_at_capacity(spike4.network, {"N": 0.0})
    v1, _ = volatility_at_capacity(spike4.network, {"N": 60.0})
    assert v1.max() <= v0.max()


def _calm(inst):
    doc = json.loads(bundled_instance("spike4").read_text())
    doc["scenarios"]["phi"] = 0.0
    return parse_instance(doc, bundled_instance("spike4").parent).network


def test_calm_market_needs_no_storage(spike4):
    net = _calm(spike4)
    var, _ = volatility_at_capacity(net, {"N": 50.0})
    assert np.all(var <= 1e-9)
    res = minimal_storage_capacity(net, VolatilityTarget(0.0), SweepPlan(10, 50))
    assert res.feasible and res.total == 0.0 and len(res.trace) == 1


def test_loose_target_needs_no_storage(spike4):
    base = solve_equilibrium(spike4.network).max_variance
    res = minimal_storage_capacity(spike4.network, VolatilityTarget(base), SweepPlan(10, 50))
    assert res.feasible and res.capacities == {"N": 0.0}


def _fine_grid_answer(net, sigma0, upto):
    for cap in range(0, int(upto) + 1):
        var, _ = volatility_at_capacity(net, {"N": float(cap)})
        if np.all(var <= sigma0):
            return cap
    return None


@pytest.mark.parametrize("mode, pct", [("strategic", 40.0), ("regulated", 80.0)])
def test_step_result_matches_fine_grid(spike4, mode, pct):
    net = _mode(spike4, mode)
    res = minimal_storage_capacity(net, VolatilityTarget(reduction_pct=pct), SweepPlan(10, 200))
    assert res.feasible
    fine = _fine_grid_answer(net, res.sigma0_sq, res.total)
    assert fine is not None
    assert res.total == 10 * math.ceil(fine / 10)


@pytest.mark.parametrize("mode", ["strategic", "regulated"])
def test_minimal_and_rechecked(spike4, mode):
    net = _mode(spike4, mode)
    plan = SweepPlan(10, 200)
    res = minimal_storage_capacity(net, VolatilityTarget(reduction_pct=40.0), plan)
    assert res.feasible and res.total > 0
    again, _ = volatility_at_capacity(net, res.capacities)
    assert np.all(again <= res.sigma0_sq)
    below, _ = volatility_at_capacity(net, {"N": res.total - plan.step})
    assert np.any(below > res.sigma0_sq)
    assert [p.total for p in res.trace] == [10.0 * k for k in range(len(res.trace))]


def test_unreachable_target(spike4):
    res = minimal_storage_capacity(_mode(spike4, "strategic"), VolatilityTarget(reduction_pct=99.0),
                                   SweepPlan(50, 200))
    assert not res.feasible and not res.halted
    assert len(res.trace) == 5
    best = min(res.trace, key=lambda p: p.max_variance)
    assert res.capacities == best.capacities


def test_failed_point_halts_sweep(spike4, monkeypatch):
    real = sizing.solve_equilibrium

    def flaky(network, config=None):
        if network.storage_firms[0].capacity == 20.0:
            return real(network, SolverConfig(max_iters=1))
        return real(network, config)

    monkeypatch.setattr(sizing, "solve_equilibrium", flaky)
    res = minimal_storage_capacity(spike4.network, VolatilityTarget(reduction_pct=80.0), SweepPlan(10, 100))
    assert res.halted and not res.feasible
    assert [p.converged for p in res.trace] == [True, True, False]
    curve = volatility_curve(spike4.network, SweepPlan(10, 30))
    assert [c.converged for c in curve] == [True, False, True]
    assert math.isnan(curve[1].max_variance)


def test_baseline_failure_raises(spike4):
    with pytest.raises(SizingError):
        minimal_storage_capacity(spike4.network, VolatilityTarget(reduction_pct=50.0), SweepPlan(10, 20),
                                 SolverConfig(max_iters=1))


def test_curve_shape(spike4):
    curve = volatility_curve(spike4.network, SweepPlan(10, 10))
    assert len(curve) == 1 and curve[0].capacity == 10.0
    curve = volatility_curve(spike4.network, SweepPlan(20, 60), storage_mode="regulated", include_baseline=True)
    assert [c.capacity for c in curve] == [0.0, 20.0, 40.0, 60.0]
    assert all(c.peak_price >= c.daily_average > 0 for c in curve)
    assert curve[0].sqrt_volatility == pytest.approx(math.sqrt(curve[0].max_variance))
    with pytest.raises(ModelError):
        volatility_curve(spike4.network, SweepPlan(10, 20), storage_mode="neutral")
    with pytest.raises(ModelError):
        volatility_curve(spike4.network, SweepPlan(10, 20, allocation="coordinate-descent"))


def test_threads_do_not_change_outcome(spike4):
    plan = SweepPlan(10, 60)
    target = VolatilityTarget(reduction_pct=40.0)
    serial = minimal_storage_capacity(spike4.network, target, plan)
    pooled = minimal_storage_capacity(spike4.network, target, plan, threads=2)
    assert serial.capacities == pooled.capacities
    assert [p.total for p in serial.trace] == [p.total for p in pooled.trace[:len(serial.trace)]]
    assert all(np.array_equal(a.variance, b.variance) for a, b in zip(serial.trace, pooled.trace))


def _two_store():
    from storvol.market import DemandCurve, Horizon, Network, ScenarioSet, TransmissionLine

    wind = [WindFirm("w", "A", np.array([[20.0, 20.0, 20.0], [60.0, 30.0, 0.0]]))]
    gens = [ClassicalGenerator("g", "B", 100.0, 20.0)]
    stores = [StorageFirm(name, node, eff_dis=0.9, eff_ch=0.9, regulated=1) for name, node in (("sa", "A"), ("sb", "B"))]
    demand = DemandCurve(np.array([[60.0, 200.0], [60.0, 120.0]]), np.array([[0.02, 0.02], [0.03, 0.03]]))
    return Network(("A", "B"), demand, Horizon(2), ScenarioSet(np.array([0.3, 0.4, 0.3])), gens, wind, stores,
                   [TransmissionLine("line", "A", "B", 10.0)])


def test_multi_node_allocation_rules():
    net = _two_store()
    with pytest.raises(ModelError):
        SweepPlan(2, 10).storage_nodes(net)
    with pytest.raises(ModelError):
        SweepPlan(2, 10, node="C").storage_nodes(net)
    pts = SweepPlan(2, 4, allocation="uniform").fixed_points(net)
    assert pts == [{"A": 0.0, "B": 0.0}, {"A": 1.0, "B": 1.0}, {"A": 2.0, "B": 2.0}]
    target = VolatilityTarget(reduction_pct=50.0)
    single = minimal_storage_capacity(net, target, SweepPlan(2, 40, node="A"))
    greedy = minimal_storage_capacity(net, target, SweepPlan(2, 40, allocation="coordinate-descent"))
    assert single.feasible and greedy.feasible
    assert single.capacities["B"] == 0.0
    assert greedy.total <= single.total
    steps = [p.total for p in greedy.trace]
    assert steps == [2.0 * k for k in range(len(steps))]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storvol.market import (Horizon, ModelError, ScenarioSet, StorageFirm, StrategyProfile, canonicalize_storage,
                            firm_payoff, nodal_injection, price, price_variance, state_of_charge,
                            storage_net_flow, summary_metrics)

from conftest import ClassicalGenerator, WindFirm, single_node, two_node


def test_price_examples():
    assert price(100.0, 0.01, 0.0) == 100.0
    assert price(100.0, 0.01, 100.0) == pytest.approx(36.78794412, rel=1e-9)
    assert price(100.0, 0.01, -100.0) == pytest.approx(271.8281828, rel=1e-9)


@given(st.floats(1e-3, 1e4), st.floats(1e-5, 1.0), st.floats(-500, 500), st.floats(-500, 500))
def test_price_log_linear(alpha, beta, q1, q2):
    p1, p2 = price(alpha, beta, q1), price(alpha, beta, q2)
    assert p1 > 0 and p2 > 0
    assert math.log(p1) - math.log(p2) == pytest.approx(-beta * (q1 - q2), abs=1e-12 * max(1.0, abs(beta * q1)))
    if q1 < q2:
        assert p1 >= p2


def _one_of_each():
    gens = [ClassicalGenerator("g", "A", 100, 10)]
    wind = [WindFirm("w", "A", np.array([[40.0]]))]
    store = [StorageFirm("s", "A", 50)]
    return two_node(generators=gens, wind=wind, storage=store)


def test_nodal_injection_sums_every_source():
    net = _one_of_each()
    p = StrategyProfile(np.full((1, 1, 1), 50.0), np.full((1, 1, 1), 30.0), np.zeros((1, 1, 1)),
                        np.zeros((1, 1, 1)), np.full((1, 1, 1), -10.0), np.full((1, 1, 1), 20.0))
    assert nodal_injection(p, net, "A", 0, 0) == 90.0
    assert nodal_injection(p, net, "B", 0, 0) == -20.0


def test_nodal_injection_empty_node_and_two_lines():
    from storvol.market import DemandCurve, Network, TransmissionLine
    lines = [TransmissionLine("l1", "A", "B", 100), TransmissionLine("l2", "A", "C", 100)]
    net = Network(("A", "B", "C"), DemandCurve(np.ones((3, 1)), np.ones((3, 1))), Horizon(1),
                  ScenarioSet(np.array([1.0])), lines=lines)
    p = StrategyProfile.zeros(net)
    assert nodal_injection(p, net, "B", 0, 0) == 0.0
    p = StrategyProfile(p.q_cg, p.q_wg, p.q_dis, p.q_ch, p.q_s, np.array([[[15.0]], [[-5.0]]]))
    assert nodal_injection(p, net, "A", 0, 0) == 10.0
    with pytest.raises(IndexError):
        nodal_injection(p, net, 5, 0, 0)


def test_price_variance_examples():
    probs = ScenarioSet(np.array([0.2, 0.6, 0.2]))
    assert price_variance(np.array([20.0, 20.0, 20.0]), probs) == 0.0
    assert price_variance(np.array([10.0, 20.0, 30.0]), probs) == 40.0
    assert price_variance(np.array([7.0]), ScenarioSet(np.array([1.0]))) == 0.0


@settings(max_examples=200)
@given(st.lists(st.floats(0.1, 1e4), min_size=2, max_size=5), st.integers(0, 2**31))
def test_price_variance_nonnegative(prices, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(len(prices)))
    p = p / p.sum()
    v = price_variance(np.array(prices), p)
    assert v >= 0
    if np.ptp(prices) == 0:
        assert v == 0


def test_price_variance_rejects_mismatched_scenarios():
    with pytest.raises(ValueError):
        price_variance(np.ones((2, 3)), np.array([0.5, 0.5]))


def test_storage_net_flow_examples():
    assert storage_net_flow(10.0, 0.0, StorageFirm("s", "N", eff_dis=0.5)) == 5.0
    assert storage_net_flow(0.0, 0.0, StorageFirm("s", "N")) == 0.0
    assert storage_net_flow(0.0, 8.0, StorageFirm("s", "N", eff_ch=0.8)) == pytest.approx(-10.0, abs=1e-12)


def test_state_of_charge_examples():
    assert state_of_charge(np.zeros(3), np.zeros(3), Horizon(3)).tolist() == [0, 0, 0]
    assert state_of_charge([10.0, 0.0], [0.0, 10.0], Horizon(2)).tolist() == [10.0, 0.0]
    assert state_of_charge([5.0, 5.0, 0.0], [0.0, 0.0, 4.0], Horizon(3, 2.0)).tolist() == [10.0, 20.0, 12.0]


@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.lists(st.floats(0, 100), min_size=4, max_size=4),
       st.floats(-10, 10))
def test_state_of_charge_linear(ch, dis, a):
    h = Horizon(4)
    base = state_of_charge(ch, dis, h)
    np.testing.assert_allclose(state_of_charge(np.multiply(a, ch), np.multiply(a, dis), h), a * base,
                               atol=1e-9 * (1 + np.max(np.abs(base))))


def test_canonicalize_examples():
    assert canonicalize_storage(5.0, 3.0, StorageFirm("s", "N")) == (2.0, 0.0)
    assert canonicalize_storage(5.0, 0.0, StorageFirm("s", "N", eff_dis=0.3)) == (5.0, 0.0)
    dis, ch = canonicalize_storage(10.0, 2.0, StorageFirm("s", "N", eff_dis=0.5, eff_ch=0.8))
    assert (dis, ch) == (pytest.approx(5.0), 0.0)
    assert 0.5 * dis == pytest.approx(2.5)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_canonicalize_properties(dis, ch, ed, ec):
    firm = StorageFirm("s", "N", eff_dis=ed, eff_ch=ec)
    d2, c2 = canonicalize_storage(dis, ch, firm)
    assert d2 * c2 == 0
    assert d2 + c2 <= dis + ch + 1e-12
    before = storage_net_flow(dis, ch, firm)
    assert storage_net_flow(d2, c2, firm) == pytest.approx(before, abs=1e-12 * (1 + (dis + ch) / (ed * ec)))


def test_firm_payoff_examples():
    wind = single_node(100.0, 0.01, wind=[WindFirm("w", "N", np.array([[50.0]]))])
    assert firm_payoff("w", StrategyProfile.zeros(wind), wind) == 0.0

    # pick alpha so the price at the given injection is exactly the stated one
    store = StorageFirm("s", "N", capacity=100, op_cost=1.0)
    net = single_node(50.0 * math.exp(0.01 * 10.0), 0.01, storage=[store])
    z = np.zeros((1, 1, 1))
    p = StrategyProfile(np.zeros((0, 1, 1)), np.zeros((0, 1, 1)), z + 20, z, z + 10, np.zeros((0, 1, 1)))
    assert firm_payoff("s", p, net) == pytest.approx(480.0, rel=1e-12)

    net = single_node(80.0 * math.exp(0.01 * 100.0), 0.01, generators=[ClassicalGenerator("g", "N", 500, 30)])
    p = StrategyProfile(z + 100, *(np.zeros((0, 1, 1)),) * 5)
    assert firm_payoff("g", p, net) == pytest.approx(5000.0, rel=1e-12)


@given(st.floats(-500, 500), st.floats(-200, 200), st.floats(-200, 200))
def test_strategic_line_payoff_is_price_spread(f, ra, rb):
    net = two_node(regulated=0)
    i, j = 0, 1
    p = StrategyProfile.zeros(net)
    p = StrategyProfile(p.q_cg, p.q_wg, p.q_dis, p.q_ch, p.q_s, np.full((1, 1, 1), f))
    # residual injections enter only through prices
    from storvol.market import nodal_prices
    P = nodal_prices(p, net)
    assert firm_payoff("line", p, net) == pytest.approx((P[i, 0, 0] - P[j, 0, 0]) * f, rel=1e-12, abs=1e-9)


def test_summary_metrics_examples():
    h1 = Horizon(1)
    s = summary_metrics(np.full((2, 1, 3), 100.0), np.array([0.2, 0.6, 0.2]), h1)
    assert s.peak.tolist() == [100, 100] and s.daily_average.tolist() == [100, 100]
    assert s.max_variance.tolist() == [0, 0]
    s = summary_metrics(np.array([[[10.0, 20.0, 30.0]]]), np.array([0.2, 0.6, 0.2]), h1)
    assert (s.peak[0], s.daily_average[0], s.max_variance[0]) == (30.0, 20.0, 40.0)
    s = summary_metrics(np.array([[[100.0], [200.0]]]), np.array([1.0]), Horizon(2))
    assert (s.peak[0], s.daily_average[0], s.max_variance[0]) == (200.0, 150.0, 0.0)
    with pytest.raises(ValueError):
        summary_metrics(np.zeros((0, 1, 1)), np.array([1.0]), h1)


def test_validation_names_fields():
    with pytest.raises(ModelError, match=r"generators\[g\]\.capacity"):
        ClassicalGenerator("g", "N", -1, 10)
    with pytest.raises(ModelError, match="probabilities"):
        ScenarioSet(np.array([0.5, 0.6]))
    with pytest.raises(ModelError, match="beta"):
        single_node(100.0, 0.0)
    with pytest.raises(ModelError, match="derating"):
        two_node().with_line_derating(1.5)

"""Centralized reference solver: closed-form cases and optimality certificates."""

import numpy as np
import pytest

from dopf import oracle, scenario
from dopf import components as comp
from dopf import network as nw


def _gen_spec(n, p_hi_kw=50.0):
    return nw.GeneratorSpec(
        p_lo=-p_hi_kw, p_hi=0.0, q_lo=-10.0, q_hi=10.0,
        psi=np.full(n, 40.0), psi_quad=np.full(n, 10.0),
    )


def one_gen_one_load(n=4, load_kw=5.0, model="dc"):
    specs = [
        _gen_spec(n),
        nw.BusSpec(),
        nw.BusSpec(),
        nw.LineSpec(g=0.0 if model == "dc" else 3.0, b=-10.0, s_max=1.0,
                    model=model),
        nw.FixedInjectionSpec(p=np.full(n, load_kw), q=np.zeros(n)),
    ]
    links = [((0, 0), (1, 0)), ((3, 0), (1, 1)), ((3, 1), (2, 0)),
             ((4, 0), (2, 1))]
    return nw.to_per_unit(nw.build_network(specs, links, horizon=n))


def test_dc_closed_form_single_load():
    """One generator feeding one fixed load over a lossless line: the
    generator produces exactly the load and the cost is sum of
    cost_quad*p^2 + cost_lin*p with p = -load."""
    n = 4
    net = one_gen_one_load(n=n, load_kw=5.0)
    sol = oracle.solve_centralized(net, model="dc")
    gen = net.components[0]
    p = np.full(n, -0.05)  # 5 kW on 100 kVA base, production is negative
    want = float(gen.cost_quad @ p**2 + gen.cost_lin @ p)
    assert sol.objective == pytest.approx(want, rel=1e-7)
    assert np.abs(sol.gen_p[0] - p).max() < 1e-7


def test_dc_zero_load_zero_cost():
    n = 3
    net = one_gen_one_load(n=n, load_kw=0.0)
    sol = oracle.solve_centralized(net, model="dc")
    assert abs(sol.objective) < 1e-9
    assert np.abs(sol.gen_p[0]).max() < 1e-6


def test_dc_respects_line_limit():
    # tight line: s_max below the load's requirement is infeasible
    n = 2
    specs = [
        _gen_spec(n),
        nw.BusSpec(),
        nw.BusSpec(),
        nw.LineSpec(g=0.0, b=-10.0, s_max=0.01, model="dc"),
        nw.FixedInjectionSpec(p=np.full(n, 5.0), q=np.zeros(n)),
    ]
    links = [((0, 0), (1, 0)), ((3, 0), (1, 1)), ((3, 1), (2, 0)),
             ((4, 0), (2, 1))]
    net = nw.to_per_unit(nw.build_network(specs, links, horizon=n))
    with pytest.raises(oracle.OracleError):
        oracle.solve_centralized(net, model="dc")


def test_dc_theta_consistent_with_flow():
    n = 3
    net = one_gen_one_load(n=n, load_kw=5.0)
    sol = oracle.solve_centralized(net, model="dc")
    b = net.components[3].b
    delta = sol.bus_theta[1] - sol.bus_theta[2]
    flow = -b * delta  # power leaving bus 1 toward bus 2
    assert np.abs(flow - 0.05).max() < 1e-6


def test_ac_solution_satisfies_kkt_and_physics():
    cfg = scenario.InstanceConfig(
        seed=21, n=6, buses=3, houses=3, generators=1, line_model="ac",
        pv_fraction=0.0, battery_fraction=0.0, shiftables_per_house=1,
        shiftable_params=(scenario.ShiftableParams(30.0, 6.0, 15.0, 1.5, 0.3, 0.3),),
    )
    net = nw.to_per_unit(scenario.gen_instance(cfg))
    sol = oracle.solve_centralized(net, model="ac")
    assert sol.kkt_residual < 1e-6
    for v in sol.bus_v.values():
        assert (v > 0.5).all() and (v < 1.5).all()


def test_ac_at_least_dc_cost():
    """Resistive AC lines dissipate, so serving the same load costs at
    least as much as the lossless DC model says."""
    n = 4
    net_ac = one_gen_one_load(n=n, load_kw=5.0, model="ac")
    net_dc = one_gen_one_load(n=n, load_kw=5.0, model="dc")
    ac = oracle.solve_centralized(net_ac, model="ac")
    dc = oracle.solve_centralized(net_dc, model="dc")
    assert ac.objective >= dc.objective - 1e-9


def test_model_mismatch_rejected():
    net = one_gen_one_load(model="dc")
    with pytest.raises(oracle.OracleError):
        oracle.solve_centralized(net, model="ac")
    with pytest.raises(ValueError):
        oracle.solve_centralized(net, model="hvdc")


def test_brute_force_house_is_exact_argmin():
    rng = np.random.default_rng(22)
    n = 6
    spec = nw.HouseSpec(
        background_p=np.full(n, 0.02), background_q=np.full(n, 0.006),
        s_max=0.1,
        shiftables=(nw.ShiftableSpec(duration=2, p_nom=0.03, t_earliest=0,
                                     t_latest=4),),
    )
    prices = rng.standard_normal(n)
    prof = oracle.brute_force_house(spec, prices)
    base = spec.base_profile(n)
    S = spec.shiftables[0].profile_matrix(n)
    costs = [float(prices @ (base + spec.shiftables[0].p_nom * S[:, j]))
             for j in range(S.shape[1])]
    assert float(prices @ prof.p_total) == pytest.approx(min(costs))
    assert prof.u[0].sum() == pytest.approx(1.0)


def test_brute_force_house_battery_buys_low_sells_high():
    n = 4
    spec = nw.HouseSpec(
        background_p=np.zeros(n), background_q=np.zeros(n), s_max=0.1,
        shiftables=(), battery=nw.BatterySpec(capacity=0.02, efficiency=1.0),
    )
    prices = np.array([1.0, 1.0, 100.0, 100.0])
    prof = oracle.brute_force_house(spec, prices)
    # charge while cheap, discharge while expensive
    assert prof.p_total[:2].sum() > 1e-4
    assert prof.p_total[2:].sum() < -1e-4


def test_brute_force_rejects_three_shiftables():
    n = 4
    sh = nw.ShiftableSpec(duration=1, p_nom=0.01, t_earliest=0, t_latest=3)
    spec = nw.HouseSpec(background_p=np.zeros(n), background_q=np.zeros(n),
                        s_max=0.1, shiftables=(sh, sh, sh))
    with pytest.raises(oracle.OracleError):
        oracle.brute_force_house(spec, np.zeros(n))


def test_oracle_requires_per_unit():
    cfg = scenario.InstanceConfig(
        seed=23, n=4, buses=2, houses=2, generators=1, line_model="dc",
        shiftables_per_house=0,
    )
    net = scenario.gen_instance(cfg)
    with pytest.raises(oracle.OracleError):
        oracle.solve_centralized(net, model="dc")

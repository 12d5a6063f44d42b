"""Instance generation: determinism, sampling laws, profiles, perturbations."""

import dataclasses
import json

import numpy as np
import pytest

from dopf import netio, scenario
from dopf import network as nw

SHORT = (scenario.ShiftableParams(30.0, 6.0, 15.0, 1.5, 0.3, 0.3),)


def _cfg(**kw):
    base = dict(seed=0, n=8, buses=3, houses=3, generators=1, line_model="dc",
                shiftable_params=SHORT, shiftables_per_house=1)
    base.update(kw)
    return scenario.InstanceConfig(**base)


# -- determinism ------------------------------------------------------------


def test_same_seed_same_instance():
    a = scenario.gen_instance(_cfg(seed=42))
    b = scenario.gen_instance(_cfg(seed=42))
    assert netio.network_to_dict(a) == netio.network_to_dict(b)


def test_different_seed_different_instance():
    a = scenario.gen_instance(_cfg(seed=1))
    b = scenario.gen_instance(_cfg(seed=2))
    assert netio.network_to_dict(a) != netio.network_to_dict(b)


def test_config_hash_tracks_config():
    assert scenario.config_hash(_cfg(seed=1)) == scenario.config_hash(_cfg(seed=1))
    assert scenario.config_hash(_cfg(seed=1)) != scenario.config_hash(_cfg(seed=2))


# -- sampling laws ----------------------------------------------------------


def test_sigma_zero_degenerate_draws():
    """With all spreads collapsed, sampled values hit the distribution means."""
    cfg = _cfg(sigma_scale=0.0, pv_fraction=0.0, battery_fraction=0.0)
    net = scenario.gen_instance(cfg)
    for spec in net.components:
        if isinstance(spec, nw.GeneratorSpec):
            assert np.allclose(spec.psi, 40.0)
            assert np.allclose(spec.psi_quad, 10.0)
        if isinstance(spec, nw.HouseSpec):
            for sh in spec.shiftables:
                # 30 min at 15-min steps (n=8 over 24 h -> 180-min steps):
                # duration rounds to >= 1 step; power hits the 1.5 kW mean
                assert sh.p_nom == pytest.approx(1.5)
            assert np.allclose(spec.background_q, 0.3 * np.asarray(spec.background_p))


def test_generator_capacity_rule():
    cfg = _cfg(sigma_scale=0.0, houses=4, generators=1)
    net = scenario.gen_instance(cfg)
    gens = [s for s in net.components if isinstance(s, nw.GeneratorSpec)]
    assert len(gens) == 1
    # p in [-s*h/2, 0] with s = 10 kVA and h = 4 houses
    assert gens[0].p_lo == pytest.approx(-10.0 * 4 / 2)
    assert gens[0].p_hi == 0.0
    assert gens[0].q_hi == pytest.approx(0.2 * 20.0)
    assert gens[0].q_lo == pytest.approx(-0.2 * 20.0)


def test_pv_battery_fractions():
    net_all = scenario.gen_instance(_cfg(houses=6, pv_fraction=1.0,
                                         battery_fraction=1.0))
    net_none = scenario.gen_instance(_cfg(houses=6, pv_fraction=0.0,
                                          battery_fraction=0.0))
    houses_all = [s for s in net_all.components if isinstance(s, nw.HouseSpec)]
    houses_none = [s for s in net_none.components if isinstance(s, nw.HouseSpec)]
    assert all(h.solar is not None and h.battery is not None for h in houses_all)
    assert all(h.solar is None and h.battery is None for h in houses_none)
    for h in houses_all:
        assert 0.85 <= h.battery.efficiency <= 0.95
        assert h.battery.capacity == pytest.approx(2.0)
        # PV injects (negative) and peaks at the panel rating
        assert h.solar.min() == pytest.approx(-2.0, rel=1e-6)
        assert (h.solar <= 0).all()


def test_instances_pass_validation_many_seeds():
    for seed in range(12):
        net = scenario.gen_instance(_cfg(seed=seed, buses=4, houses=5,
                                         pv_fraction=0.5, battery_fraction=0.5))
        nw.to_per_unit(net)  # validation happens in build; scaling must work too


def test_truncated_normal_mean():
    rng = np.random.default_rng(0)
    draws = scenario._trunc_normal(rng, 40.0, 8.0, 4.0, size=200_000)
    assert (draws >= 4.0).all()
    # truncation at 4 = 4.5 sigma below the mean barely moves it
    assert abs(draws.mean() - 40.0) < 0.1


# -- load profile -----------------------------------------------------------


def test_load_profile_integral():
    for n in (8, 24, 96):
        l = scenario.gen_load_profile(n, daily_kwh=20.0)
        assert l.sum() * 24.0 / n == pytest.approx(20.0, abs=1e-9)
        assert (l > 0).all()


def test_load_profile_flat():
    l = scenario.gen_load_profile(12, daily_kwh=20.0, shape="flat")
    assert np.allclose(l, 20.0 / 24.0)


def test_load_profile_double_peak_shape():
    l = scenario.gen_load_profile(96, daily_kwh=20.0)
    hours = (np.arange(96) + 0.5) * 0.25
    evening = l[np.argmin(np.abs(hours - 19.0))]
    morning = l[np.argmin(np.abs(hours - 7.5))]
    night = l[np.argmin(np.abs(hours - 2.0))]
    assert evening > morning > night


def test_load_profile_csv(tmp_path):
    path = tmp_path / "profile.csv"
    np.savetxt(path, np.full(8, 2.0), delimiter=",")
    l = scenario.gen_load_profile(8, daily_kwh=6.0, csv_path=str(path))
    assert l.sum() * 3.0 == pytest.approx(6.0)  # rescaled to 6 kWh
    l2 = scenario.gen_load_profile(8, csv_path=str(path), rescale=False)
    assert np.allclose(l2, 2.0)
    np.savetxt(path, np.full(5, 2.0), delimiter=",")
    with pytest.raises(scenario.ScenarioError):
        scenario.gen_load_profile(8, csv_path=str(path))


def test_load_profile_errors():
    with pytest.raises(scenario.ScenarioError):
        scenario.gen_load_profile(0)
    with pytest.raises(scenario.ScenarioError):
        scenario.gen_load_profile(8, shape="triangular")


# -- irradiance and house counts -------------------------------------------


def test_irradiance_values():
    n = 96
    assert scenario.irradiance(0, n) == pytest.approx(0.0)
    assert scenario.irradiance(n // 2, n) == pytest.approx(1.0)
    assert scenario.irradiance(n // 4, n) == pytest.approx(0.0)
    t = np.arange(n)
    vals = scenario.irradiance(t, n)
    assert (vals >= 0).all() and vals.max() == pytest.approx(1.0)


def test_houses_per_bus():
    assert scenario.houses_per_bus(1.45) == 1
    assert scenario.houses_per_bus(1.0) == 0
    assert list(scenario.houses_per_bus([2.9, 0.0, 10.0])) == [2, 0, 6]
    with pytest.raises(scenario.ScenarioError):
        scenario.houses_per_bus(-1.0)


# -- manifest ---------------------------------------------------------------


def test_manifest_contents():
    cfg = _cfg(seed=3)
    net = scenario.gen_instance(cfg)
    doc = scenario.manifest(cfg, net)
    assert doc["seed"] == 3
    assert doc["config_hash"] == scenario.config_hash(cfg)
    assert doc["derived"]["houses"] == 3
    assert doc["derived"]["horizon"] == 8
    assert doc["derived"]["buses"] == 3


# -- perturbations ----------------------------------------------------------


def test_perturb_solar_scales_only_pv():
    net = scenario.gen_instance(_cfg(pv_fraction=1.0, battery_fraction=0.0))
    up = scenario.perturb_solar(net, 1.2)
    back = scenario.perturb_solar(up, 1 / 1.2)
    for a, b, c in zip(net.components, up.components, back.components):
        if isinstance(a, nw.HouseSpec):
            assert np.allclose(np.asarray(b.solar), 1.2 * np.asarray(a.solar))
            assert np.allclose(np.asarray(c.solar), np.asarray(a.solar))
            assert np.array_equal(np.asarray(b.background_p),
                                  np.asarray(a.background_p))
    with pytest.raises(scenario.ScenarioError):
        scenario.perturb_solar(net, 0.0)


def test_resample_sigma_zero_is_identity():
    net = scenario.gen_instance(_cfg())
    out = scenario.resample_for_warmstart(net, 0.0, seed=1)
    assert netio.network_to_dict(out) == netio.network_to_dict(net)


def test_resample_fully_correlated_shares_factor():
    net = scenario.gen_instance(_cfg(houses=4))
    out = scenario.resample_for_warmstart(net, 0.3, seed=5, mode="fully-correlated")
    factors = []
    for a, b in zip(net.components, out.components):
        if isinstance(a, nw.HouseSpec):
            factors.append(np.asarray(b.background_p) / np.asarray(a.background_p))
    flat = np.concatenate([f.ravel() for f in factors])
    assert np.allclose(flat, flat[0])
    assert abs(flat[0] - 1.0) > 1e-6  # actually perturbed


def test_resample_independent_statistics():
    net = scenario.gen_instance(_cfg(houses=4, n=24))
    ratios = []
    for seed in range(200):
        out = scenario.resample_for_warmstart(net, 0.2, seed=seed)
        for a, b in zip(net.components, out.components):
            if isinstance(a, nw.HouseSpec):
                ratios.append(np.asarray(b.background_p) / np.asarray(a.background_p))
    flat = np.concatenate([r.ravel() for r in ratios])
    assert abs(flat.mean() - 1.0) < 0.01
    assert abs(flat.std() - 0.2) < 0.01


def test_resample_rejects_bad_args():
    net = scenario.gen_instance(_cfg())
    with pytest.raises(scenario.ScenarioError):
        scenario.resample_for_warmstart(net, -0.1)
    with pytest.raises(scenario.ScenarioError):
        scenario.resample_for_warmstart(net, 0.1, mode="pairwise")


# -- file ingestion ---------------------------------------------------------


def test_instance_from_file_with_static_loads(tmp_path):
    """A network file carrying only per-bus static loads gets synthesized
    houses at floor(static / 1.45) per bus."""
    net = scenario.gen_instance(_cfg(seed=9))
    doc = netio.network_to_dict(net)
    doc["houses"] = []
    for bus in doc["buses"]:
        bus["static_p_kw"] = 3.0  # -> 2 houses each
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(doc))
    cfg = dataclasses.replace(_cfg(seed=9), network_file=str(path))
    out = scenario.gen_instance(cfg)
    n_houses = sum(isinstance(s, nw.HouseSpec) for s in out.components)
    assert n_houses == 2 * len(doc["buses"])


def test_ten_bus_example_generates():
    cfg = scenario.ten_bus_example(n=8)
    cfg = dataclasses.replace(cfg, shiftable_params=SHORT)
    net = scenario.gen_instance(cfg)
    assert sum(isinstance(s, nw.HouseSpec) for s in net.components) == 20
    assert len(net.bus_indices()) == 10

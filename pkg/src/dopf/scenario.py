"""Seeded random instance generation, profiles and perturbations.

Every stochastic draw flows from one ``numpy.random.default_rng(seed)``
stream, so an instance is fully reproduced by its seed plus configuration.
Magnitudes follow the component-parameter table used throughout: generator
marginal cost ``max(4, N(40, 8^2))`` $/MWh with quadratic term
``max(1, N(10, 2^2))``, household background power ``N(l_t, (0.2 l_t)^2)``
around a daily load profile integrating to 20 kWh, and two shiftable
appliances per house with truncated-normal durations and powers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import netio
from . import network as nw


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class ShiftableParams:
    """Sampling law for one appliance class: duration and power are normal
    draws truncated below by max(floor, .)."""

    duration_mean_min: float
    duration_std_min: float
    duration_floor_min: float
    p_mean_kw: float
    p_std_kw: float
    p_floor_kw: float


DEFAULT_SHIFTABLES = (
    ShiftableParams(90.0, 18.0, 15.0, 3.0, 0.6, 0.3),
    ShiftableParams(60.0, 12.0, 15.0, 1.0, 0.2, 0.1),
)

# a typical house at 75% of peak draws this much; benchmark static bus loads
# are converted to house counts by dividing by it and rounding down
TYPICAL_HOUSE_KW = 1.45


@dataclass(frozen=True)
class InstanceConfig:
    seed: int = 0
    n: int = 96
    step_minutes: float = 15.0
    network_file: str | None = None  # ingest topology instead of synthesizing
    buses: int = 10
    houses: int | None = None  # total; None = 2 per bus
    generators: int = 2
    line_model: str = nw.AC
    line_s_max_pu: float = 1.0
    extra_chords: int | None = None  # meshing beyond the ring; None = buses // 3
    pv_fraction: float = 0.5
    battery_fraction: float = 0.5
    pv_kw: float = 2.0
    battery_kwh: float = 2.0
    eta_range: tuple[float, float] = (0.85, 0.95)
    shiftables_per_house: int = 2
    shiftable_params: tuple[ShiftableParams, ...] = DEFAULT_SHIFTABLES
    daily_kwh: float = 20.0
    load_shape: str = "double_peak"  # "double_peak", "flat", or a CSV path
    load_cv: float = 0.2  # per-step coefficient of variation of house draw
    q_ratio: float = 0.3  # house reactive power as a fraction of real power
    house_s_max_kva: float = 10.0
    psi_mean: float = 40.0
    psi_std: float = 8.0
    psi_floor: float = 4.0
    psi_quad_mean: float = 10.0
    psi_quad_std: float = 2.0
    psi_quad_floor: float = 1.0
    sigma_scale: float = 1.0  # multiplies every sampling std (0 = degenerate)
    v_base_kv: float = 11.0
    s_base_kva: float = 100.0


def config_hash(cfg: InstanceConfig) -> str:
    doc = dataclasses.asdict(cfg)
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def gen_load_profile(
    n: int,
    daily_kwh: float = 20.0,
    shape: str = "double_peak",
    csv_path: str | None = None,
    rescale: bool = True,
) -> np.ndarray:
    """Nonnegative kW profile l_t with sum(l_t) * dt = daily_kwh.

    The default shape is a double-peak curve: a constant base plus Gaussian
    bumps at 07:30 (sharp, morning) and 19:00 (broad, evening) in wall-clock
    hours mapped onto the n steps of a 24 h horizon.
    """
    if n < 1:
        raise ScenarioError("horizon must have at least one step")
    dt_h = 24.0 / n
    if csv_path is not None:
        raw = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        vals = raw[:, -1] if raw.shape[1] > 1 else raw[:, 0]
        if vals.shape[0] != n:
            raise ScenarioError(f"profile CSV has {vals.shape[0]} rows, expected {n}")
        l = np.asarray(vals, dtype=float)
        if np.any(l < 0):
            raise ScenarioError("load profile must be nonnegative")
    elif shape == "flat":
        l = np.ones(n)
    elif shape == "double_peak":
        hours = (np.arange(n) + 0.5) * dt_h
        l = (
            0.35
            + 0.9 * np.exp(-((hours - 7.5) ** 2) / (2 * 1.5**2))
            + 1.2 * np.exp(-((hours - 19.0) ** 2) / (2 * 2.5**2))
        )
    else:
        raise ScenarioError(f"unknown load shape {shape!r}")
    if rescale:
        total = float(l.sum() * dt_h)
        if total <= 0:
            raise ScenarioError("load profile integrates to zero; cannot rescale")
        l = l * (daily_kwh / total)
    return l


def irradiance(t, n: int):
    """Clamped sine solar shape: max(0, sin(2 pi t / n - pi / 2))."""
    return np.maximum(0.0, np.sin(2.0 * np.pi * np.asarray(t, dtype=float) / n - np.pi / 2.0))


def houses_per_bus(static_p_kw):
    """floor(static load / typical house draw) per bus."""
    p = np.asarray(static_p_kw, dtype=float)
    if np.any(p < 0):
        raise ScenarioError("static bus load must be nonnegative")
    counts = np.floor(p / TYPICAL_HOUSE_KW).astype(int)
    return int(counts) if np.isscalar(static_p_kw) else counts


# ---------------------------------------------------------------------------
# Component sampling
# ---------------------------------------------------------------------------


def _trunc_normal(rng, mean, std, floor, size=None):
    return np.maximum(floor, rng.normal(mean, std, size=size))


def _sample_generator(cfg: InstanceConfig, rng, total_houses: int) -> nw.GeneratorSpec:
    p_lo = -cfg.house_s_max_kva * total_houses / 2.0
    return nw.GeneratorSpec(
        p_lo=p_lo,
        p_hi=0.0,
        q_lo=0.2 * p_lo,
        q_hi=-0.2 * p_lo,
        psi=_trunc_normal(rng, cfg.psi_mean, cfg.sigma_scale * cfg.psi_std,
                          cfg.psi_floor, cfg.n),
        psi_quad=_trunc_normal(rng, cfg.psi_quad_mean, cfg.sigma_scale * cfg.psi_quad_std,
                               cfg.psi_quad_floor, cfg.n),
    )


def _sample_shiftable(cfg: InstanceConfig, params: ShiftableParams, rng) -> nw.ShiftableSpec:
    d_min = _trunc_normal(rng, params.duration_mean_min,
                          cfg.sigma_scale * params.duration_std_min,
                          params.duration_floor_min)
    p_nom = _trunc_normal(rng, params.p_mean_kw, cfg.sigma_scale * params.p_std_kw,
                          params.p_floor_kw)
    steps = max(1, int(round(d_min / cfg.step_minutes)))
    if steps > cfg.n:
        raise ScenarioError(f"shiftable duration {steps} steps exceeds horizon {cfg.n}")
    return nw.ShiftableSpec(
        duration=steps, p_nom=float(p_nom), t_earliest=0, t_latest=cfg.n - steps,
    )


def _sample_house(cfg: InstanceConfig, rng, load_kw: np.ndarray) -> nw.HouseSpec:
    p = rng.normal(load_kw, cfg.sigma_scale * cfg.load_cv * load_kw)
    shiftables = tuple(
        _sample_shiftable(cfg, cfg.shiftable_params[k % len(cfg.shiftable_params)], rng)
        for k in range(cfg.shiftables_per_house)
    )
    has_pv = rng.random() < cfg.pv_fraction
    has_battery = rng.random() < cfg.battery_fraction
    solar = None
    if has_pv:
        solar = -cfg.pv_kw * irradiance(np.arange(cfg.n), cfg.n)
    battery = None
    if has_battery:
        battery = nw.BatterySpec(
            capacity=cfg.battery_kwh,
            efficiency=float(rng.uniform(*cfg.eta_range)),
        )
    return nw.HouseSpec(
        background_p=p,
        background_q=cfg.q_ratio * p,
        s_max=cfg.house_s_max_kva,
        shiftables=shiftables,
        battery=battery,
        solar=solar,
    )


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


def _mesh_edges(n_buses: int, extra_chords: int, rng) -> list[tuple[int, int]]:
    """A ring over all buses plus randomly drawn non-adjacent chords."""
    if n_buses < 2:
        raise ScenarioError("need at least two buses")
    if n_buses == 2:
        return [(0, 1)]
    edges = [(i, (i + 1) % n_buses) for i in range(n_buses)]
    have = {frozenset(e) for e in edges}
    candidates = [
        (i, j)
        for i in range(n_buses)
        for j in range(i + 1, n_buses)
        if frozenset((i, j)) not in have
    ]
    k = min(extra_chords, len(candidates))
    if k > 0:
        picks = rng.choice(len(candidates), size=k, replace=False)
        edges.extend(candidates[int(i)] for i in picks)
    return edges


def _sample_line(cfg: InstanceConfig, rng) -> nw.LineSpec:
    b = -rng.uniform(8.0, 14.0)
    g = rng.uniform(2.0, 5.0)
    return nw.LineSpec(
        g=g, b=b, s_max=cfg.line_s_max_pu, model=cfg.line_model,
    )


# ---------------------------------------------------------------------------
# Instance assembly
# ---------------------------------------------------------------------------


def gen_instance(cfg: InstanceConfig) -> nw.Network:
    """Build a seeded, reproducible physical-units network.

    With ``network_file`` set, buses/lines/generators come from the file; its
    houses are used verbatim when present, otherwise synthesized per bus from
    the ``static_p_kw`` fields via :func:`houses_per_bus`.
    """
    rng = np.random.default_rng(cfg.seed)
    load = gen_load_profile(
        cfg.n, cfg.daily_kwh,
        shape=cfg.load_shape if cfg.load_shape in ("double_peak", "flat") else "double_peak",
        csv_path=None if cfg.load_shape in ("double_peak", "flat") else cfg.load_shape,
    )

    if cfg.network_file is not None:
        return _instance_from_file(cfg, rng, load)

    edges = _mesh_edges(
        cfg.buses,
        cfg.buses // 3 if cfg.extra_chords is None else cfg.extra_chords,
        rng,
    )
    total_houses = 2 * cfg.buses if cfg.houses is None else cfg.houses
    house_bus = [h % cfg.buses for h in range(total_houses)]
    gen_bus = [g % cfg.buses for g in range(cfg.generators)]

    specs: list = [nw.BusSpec(f"b{i}") for i in range(cfg.buses)]
    links: list = []
    slot = [0] * cfg.buses

    def attach(comp: int, comp_slot: int, bus: int):
        links.append(((comp, comp_slot), (bus, slot[bus])))
        slot[bus] += 1

    for a, b_ in edges:
        c = len(specs)
        specs.append(_sample_line(cfg, rng))
        attach(c, 0, a)
        attach(c, 1, b_)
    for gb in gen_bus:
        c = len(specs)
        specs.append(_sample_generator(cfg, rng, total_houses))
        attach(c, 0, gb)
    for hb in house_bus:
        c = len(specs)
        specs.append(_sample_house(cfg, rng, load))
        attach(c, 0, hb)

    return nw.build_network(
        specs, links, horizon=cfg.n, step_minutes=cfg.step_minutes,
        v_base_kv=cfg.v_base_kv, s_base_kva=cfg.s_base_kva,
    )


def _instance_from_file(cfg: InstanceConfig, rng, load: np.ndarray) -> nw.Network:
    doc = netio.load_raw(cfg.network_file)
    if int(doc["horizon"]) != cfg.n:
        raise ScenarioError(
            f"network file horizon {doc['horizon']} != configured n {cfg.n}"
        )
    if doc.get("houses"):
        return netio.network_from_dict(doc)
    statics = [b.get("static_p_kw", 0.0) for b in doc["buses"]]
    counts = houses_per_bus(np.asarray(statics))
    total = int(counts.sum())
    if total == 0:
        raise ScenarioError("network file supplies no houses and no static loads")
    doc = dict(doc)
    doc["houses"] = []
    base = netio.network_from_dict({**doc, "houses": []})
    specs = list(base.components)
    links: list = []
    # rebuild the original links, then append synthesized houses
    bus_ids = base.bus_indices()
    bus_pos = {c: i for i, c in enumerate(bus_ids)}
    slot_next = [len(base.terminal_of[c]) for c in bus_ids]
    dev_slot_seen: dict[int, int] = {}
    for dev_t, bus_t in base.connections:
        dc = base.component_of(dev_t)
        bc = base.component_of(bus_t)
        ds = dev_slot_seen.get(dc, 0)
        dev_slot_seen[dc] = ds + 1
        bus_slot = base.terminal_of[bc].index(bus_t)
        links.append(((dc, ds), (bc, bus_slot)))
    for bpos, count in enumerate(counts):
        bus_comp = bus_ids[bpos]
        for _ in range(int(count)):
            c = len(specs)
            specs.append(_sample_house(cfg, rng, load))
            links.append(((c, 0), (bus_comp, slot_next[bus_pos[bus_comp]])))
            slot_next[bus_pos[bus_comp]] += 1
    return nw.build_network(
        specs, links, horizon=cfg.n, step_minutes=base.step_minutes,
        v_base_kv=base.v_base_kv, s_base_kva=base.s_base_kva,
    )


def manifest(cfg: InstanceConfig, net: nw.Network | None = None) -> dict:
    doc = {
        "seed": cfg.seed,
        "config": dataclasses.asdict(cfg),
        "config_hash": config_hash(cfg),
    }
    if net is not None:
        doc["derived"] = {
            "components": len(net.components),
            "buses": len(net.bus_indices()),
            "houses": sum(isinstance(c, nw.HouseSpec) for c in net.components),
            "lines": sum(isinstance(c, nw.LineSpec) for c in net.components),
            "generators": sum(isinstance(c, nw.GeneratorSpec) for c in net.components),
            "connections": len(net.connections),
            "horizon": net.horizon,
        }
    return doc


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------


def perturb_solar(net: nw.Network, factor: float) -> nw.Network:
    """Scale every PV profile by ``factor``; everything else untouched."""
    if factor <= 0:
        raise ScenarioError("solar factor must be positive")
    out = []
    for spec in net.components:
        if isinstance(spec, nw.HouseSpec) and spec.solar is not None:
            out.append(dataclasses.replace(spec, solar=factor * np.asarray(spec.solar)))
        else:
            out.append(spec)
    return dataclasses.replace(net, components=tuple(out))


def resample_for_warmstart(
    net: nw.Network, sigma: float, seed: int = 0, mode: str = "independent"
) -> nw.Network:
    """Scale household background power and shiftable nominal power by
    N(1, sigma^2) factors: one draw per value (independent) or one shared
    draw for the whole network (fully-correlated)."""
    if sigma < 0:
        raise ScenarioError("sigma must be nonnegative")
    if mode not in ("independent", "fully-correlated"):
        raise ScenarioError(f"unknown resample mode {mode!r}")
    rng = np.random.default_rng(seed)
    shared = float(rng.normal(1.0, sigma)) if mode == "fully-correlated" else None

    def draw(size=None):
        if shared is not None:
            return shared if size is None else np.full(size, shared)
        return rng.normal(1.0, sigma, size=size)

    out = []
    for spec in net.components:
        if not isinstance(spec, nw.HouseSpec):
            out.append(spec)
            continue
        scale = draw(np.asarray(spec.background_p).shape)
        out.append(dataclasses.replace(
            spec,
            background_p=np.asarray(spec.background_p) * scale,
            background_q=np.asarray(spec.background_q) * scale,
            shiftables=tuple(
                dataclasses.replace(sh, p_nom=sh.p_nom * float(draw()))
                for sh in spec.shiftables
            ),
        ))
    return dataclasses.replace(net, components=tuple(out))


# ---------------------------------------------------------------------------
# Shipped example
# ---------------------------------------------------------------------------


def ten_bus_example(seed: int = 7, n: int = 96, line_model: str = nw.AC) -> InstanceConfig:
    """A small meshed 10-bus configuration used by the command-line examples."""
    return InstanceConfig(seed=seed, n=n, buses=10, houses=20, line_model=line_model)

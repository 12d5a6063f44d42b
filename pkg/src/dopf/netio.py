"""Versioned JSON serialization of networks in physical units.

The document layout is:

    {
      "version": 1,
      "horizon": 96,
      "step_minutes": 15.0,
      "bases": {"v_kv": 11.0, "s_kva": 100.0},
      "buses": [{"name": "b0", "static_p_kw": 32.0}, ...],
      "lines": [{"from": 0, "to": 1, "g": 4.0, "b": -11.0, "s": 1.0,
                 "v_min": 0.9, "v_max": 1.1, "theta_max": 0.5, "model": "ac"}],
      "generators": [{"bus": 0, "p_min_kw": -200.0, "p_max_kw": 0.0,
                      "q_min_kvar": -40.0, "q_max_kvar": 40.0,
                      "psi": [...], "psi_quad": [...],
                      "ramp_kw": null, "p0_kw": 0.0}],
      "houses": [{"bus": 1, "background_p_kw": [...],
                  "background_q_kvar": [...], "s_max_kva": 10.0,
                  "shiftables": [{"duration_steps": 6, "p_nom_kw": 3.0,
                                  "t_earliest": 0, "t_latest": 90}],
                  "battery": {"capacity_kwh": 2.0, "efficiency": 0.9,
                              "e0_kwh": null, "rate_cap_kw": null},
                  "solar_kw": [...]}]
    }

Line admittances and limits are per-unit (the only quantities stored that
way); every other magnitude is physical (kW, kVA, kvar, kWh).  ``"from"`` and
``"to"`` index into ``"buses"``; ``"houses"`` may be omitted for benchmark
files that only carry per-bus static loads (``"static_p_kw"``).
"""

from __future__ import annotations

import json

import numpy as np

from . import network as nw

SCHEMA_VERSION = 1


class NetIoError(Exception):
    pass


def _vec(x, n, what):
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise NetIoError(f"{what} must have length {n}, got shape {v.shape}")
    return v


def network_to_dict(net: nw.Network) -> dict:
    """Serialize a physical-units network into the schema above."""
    if net.per_unit:
        raise NetIoError("serialize physical-units networks, not per-unit ones")
    bus_ids = net.bus_indices()
    bus_pos = {c: i for i, c in enumerate(bus_ids)}

    # component index -> bus position for each single-terminal device / line end
    def bus_of_terminal(term: int) -> int:
        return bus_pos[net.component_of(term)]

    attached: dict[int, list[int]] = {}
    for dev_t, bus_t in net.connections:
        attached.setdefault(net.component_of(dev_t), []).append(bus_of_terminal(bus_t))

    doc = {
        "version": SCHEMA_VERSION,
        "horizon": net.horizon,
        "step_minutes": net.step_minutes,
        "bases": {"v_kv": net.v_base_kv, "s_kva": net.s_base_kva},
        "buses": [{"name": f"b{i}"} for i in range(len(bus_ids))],
        "lines": [],
        "generators": [],
        "houses": [],
    }
    for c, spec in enumerate(net.components):
        if isinstance(spec, nw.BusSpec):
            continue
        buses = attached.get(c, [])
        if isinstance(spec, nw.LineSpec):
            doc["lines"].append({
                "from": buses[0], "to": buses[1],
                "g": spec.g, "b": spec.b, "s": spec.s_max,
                "v_min": spec.v_lo, "v_max": spec.v_hi,
                "theta_max": spec.theta_max, "model": spec.model,
            })
        elif isinstance(spec, nw.GeneratorSpec):
            doc["generators"].append({
                "bus": buses[0],
                "p_min_kw": spec.p_lo, "p_max_kw": spec.p_hi,
                "q_min_kvar": spec.q_lo, "q_max_kvar": spec.q_hi,
                "psi": np.asarray(spec.psi, dtype=float).tolist(),
                "psi_quad": np.asarray(spec.psi_quad, dtype=float).tolist(),
                "ramp_kw": None if np.isinf(spec.ramp) else spec.ramp,
                "p0_kw": spec.p0,
            })
        elif isinstance(spec, nw.HouseSpec):
            doc["houses"].append({
                "bus": buses[0],
                "background_p_kw": np.asarray(spec.background_p, dtype=float).tolist(),
                "background_q_kvar": np.asarray(spec.background_q, dtype=float).tolist(),
                "s_max_kva": spec.s_max,
                "shiftables": [
                    {
                        "duration_steps": sh.duration, "p_nom_kw": sh.p_nom,
                        "t_earliest": sh.t_earliest, "t_latest": sh.t_latest,
                        **({"fixed_start": sh.fixed_start} if sh.fixed_start is not None else {}),
                    }
                    for sh in spec.shiftables
                ],
                "battery": None if spec.battery is None else {
                    "capacity_kwh": spec.battery.capacity,
                    "efficiency": spec.battery.efficiency,
                    "e0_kwh": spec.battery.e0,
                    "rate_cap_kw": spec.battery.rate_cap,
                },
                "solar_kw": None if spec.solar is None
                else np.asarray(spec.solar, dtype=float).tolist(),
            })
        else:
            raise NetIoError(f"component kind {type(spec).__name__} has no schema entry")
    return doc


def network_from_dict(doc: dict) -> nw.Network:
    """Build and validate a physical-units network from a schema document."""
    if doc.get("version") != SCHEMA_VERSION:
        raise NetIoError(f"unsupported or missing schema version: {doc.get('version')!r}")
    try:
        return _network_from_dict(doc)
    except NetIoError:
        raise
    except KeyError as exc:
        raise NetIoError(f"network file missing required field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise NetIoError(f"network file malformed: {exc}") from exc


def _network_from_dict(doc: dict) -> nw.Network:
    n = int(doc["horizon"])
    bases = doc.get("bases", {})
    n_buses = len(doc["buses"])

    specs: list = [nw.BusSpec(b.get("name", f"b{i}")) for i, b in enumerate(doc["buses"])]
    links: list = []
    slot_count = [0] * n_buses

    def bus_slot(b: int):
        if not 0 <= b < n_buses:
            raise NetIoError(f"bus index {b} out of range")
        slot_count[b] += 1
        return (b, slot_count[b] - 1)

    for ln in doc.get("lines", []):
        c = len(specs)
        specs.append(nw.LineSpec(
            g=float(ln["g"]), b=float(ln["b"]), s_max=float(ln["s"]),
            v_lo=float(ln.get("v_min", 0.9)), v_hi=float(ln.get("v_max", 1.1)),
            theta_max=float(ln.get("theta_max", 0.5)), model=ln.get("model", nw.AC),
        ))
        links.append(((c, 0), bus_slot(int(ln["from"]))))
        links.append(((c, 1), bus_slot(int(ln["to"]))))
    for gn in doc.get("generators", []):
        c = len(specs)
        ramp = gn.get("ramp_kw")
        specs.append(nw.GeneratorSpec(
            p_lo=float(gn["p_min_kw"]), p_hi=float(gn["p_max_kw"]),
            q_lo=float(gn["q_min_kvar"]), q_hi=float(gn["q_max_kvar"]),
            psi=_vec(gn["psi"], n, "generator psi"),
            psi_quad=_vec(gn["psi_quad"], n, "generator psi_quad"),
            ramp=np.inf if ramp is None else float(ramp),
            p0=float(gn.get("p0_kw", 0.0)),
        ))
        links.append(((c, 0), bus_slot(int(gn["bus"]))))
    for hs in doc.get("houses", []):
        c = len(specs)
        bat = hs.get("battery")
        solar = hs.get("solar_kw")
        specs.append(nw.HouseSpec(
            background_p=_vec(hs["background_p_kw"], n, "house background_p_kw"),
            background_q=_vec(hs["background_q_kvar"], n, "house background_q_kvar"),
            s_max=float(hs["s_max_kva"]),
            shiftables=tuple(
                nw.ShiftableSpec(
                    duration=int(sh["duration_steps"]), p_nom=float(sh["p_nom_kw"]),
                    t_earliest=int(sh["t_earliest"]), t_latest=int(sh["t_latest"]),
                    fixed_start=sh.get("fixed_start"),
                )
                for sh in hs.get("shiftables", [])
            ),
            battery=None if bat is None else nw.BatterySpec(
                capacity=float(bat["capacity_kwh"]),
                efficiency=float(bat["efficiency"]),
                e0=None if bat.get("e0_kwh") is None else float(bat["e0_kwh"]),
                rate_cap=None if bat.get("rate_cap_kw") is None else float(bat["rate_cap_kw"]),
            ),
            solar=None if solar is None else _vec(solar, n, "house solar_kw"),
        ))
        links.append(((c, 0), bus_slot(int(hs["bus"]))))

    try:
        return nw.build_network(
            specs, links, horizon=n,
            step_minutes=float(doc.get("step_minutes", 15.0)),
            v_base_kv=float(bases.get("v_kv", 11.0)),
            s_base_kva=float(bases.get("s_kva", 100.0)),
        )
    except nw.NetworkError as exc:
        raise NetIoError(f"network file invalid: {exc}") from exc


def save_network(net: nw.Network, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=1)


def load_network(path: str) -> nw.Network:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise NetIoError(f"cannot read network file {path}: {exc}") from exc
    return network_from_dict(doc)


def load_raw(path: str) -> dict:
    """Read a schema document without building a Network (used when houses
    are synthesized from per-bus static loads rather than stored)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise NetIoError(f"cannot read network file {path}: {exc}") from exc
    if doc.get("version") != SCHEMA_VERSION:
        raise NetIoError(f"unsupported or missing schema version: {doc.get('version')!r}")
    return doc

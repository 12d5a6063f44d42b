"""Component/terminal/connection graph, per-unit scaling and validation.

A network is a bipartite graph: buses on one side, everything else on the
other.  Each terminal carries the horizon time series (p, q, v, theta),
stacked in that fixed row order.  A connection equates two terminals through
h(y_i, y_j) = y_i + A y_j, where A flips the sign of the v and theta rows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

# row indices of a (4, n) terminal array
P, Q, V, TH = 0, 1, 2, 3
SIGN = np.array([1.0, 1.0, -1.0, -1.0])

AC = "ac"
DC = "dc"


class NetworkError(Exception):
    pass


def signed(y: np.ndarray) -> np.ndarray:
    """Apply the connection sign map: +1 on p,q rows, -1 on v,theta rows."""
    return y * SIGN[:, None]


def consensus_gap(y_dev: np.ndarray, y_bus: np.ndarray) -> np.ndarray:
    """h(y_i, y_j) = (p_i+p_j, q_i+q_j, v_i-v_j, theta_i-theta_j)."""
    return y_dev + signed(y_bus)


# ---------------------------------------------------------------------------
# Component specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BusSpec:
    name: str = "bus"

    n_terminals = None  # inferred from links


@dataclass(frozen=True)
class LineSpec:
    """Branch with admittance y = g + jb, always expressed in per-unit."""

    g: float
    b: float
    s_max: float
    v_lo: float = 0.9
    v_hi: float = 1.1
    theta_max: float = 0.5
    model: str = AC

    n_terminals = 2

    def __post_init__(self):
        if self.g < 0:
            raise NetworkError("line conductance must be nonnegative")
        if self.model not in (AC, DC):
            raise NetworkError(f"unknown line model {self.model!r}")
        if self.model == DC and self.b == 0:
            raise NetworkError("DC line needs nonzero susceptance")
        if self.model == AC and self.v_lo <= 0:
            raise NetworkError("AC line voltage box must be positive")


@dataclass(frozen=True)
class GeneratorSpec:
    """Dispatchable source; production is negative power into the terminal.

    Cost coefficients psi ($/MWh) and psi_quad ($/MW^2 h) are given per time
    step in physical units.  Per-unit scaling folds the time-step length and
    the power base into the derived arrays cost_quad/cost_lin, so that the
    horizon cost in dollars is sum(cost_quad * p^2 + cost_lin * p) with p in
    per-unit.
    """

    p_lo: float
    p_hi: float
    q_lo: float
    q_hi: float
    psi: np.ndarray  # linear coefficient per step, $/MWh
    psi_quad: np.ndarray  # diagonal quadratic coefficient per step, $/MW^2 h
    ramp: float = np.inf
    p0: float = 0.0
    cost_quad: np.ndarray | None = None  # derived, $ per pu^2, set by scaling
    cost_lin: np.ndarray | None = None  # derived, $ per pu

    n_terminals = 1

    def __post_init__(self):
        if self.p_lo > self.p_hi or self.q_lo > self.q_hi:
            raise NetworkError("generator bounds inverted")
        if np.any(np.asarray(self.psi_quad) < 0):
            raise NetworkError("generator quadratic cost must be nonnegative")
        if self.ramp < 0:
            raise NetworkError("ramp rate must be nonnegative")


@dataclass(frozen=True)
class ShiftableSpec:
    """Runs once for ``duration`` steps at ``p_nom``, starting in a window."""

    duration: int
    p_nom: float
    t_earliest: int  # 0-based first allowed start step
    t_latest: int  # 0-based last allowed start step
    fixed_start: int | None = None

    def __post_init__(self):
        if self.duration < 1:
            raise NetworkError("shiftable duration must be >= 1 step")
        if not 0 <= self.t_earliest <= self.t_latest:
            raise NetworkError("shiftable window invalid")
        if self.fixed_start is not None and not (
            self.t_earliest <= self.fixed_start <= self.t_latest
        ):
            raise NetworkError("fixed start outside window")

    @property
    def window(self) -> range:
        if self.fixed_start is not None:
            return range(self.fixed_start, self.fixed_start + 1)
        return range(self.t_earliest, self.t_latest + 1)

    def profile_matrix(self, n: int) -> np.ndarray:
        """(n, window) 0/1 matrix mapping start indicators to the load shape."""
        if self.t_latest + self.duration > n:
            raise NetworkError("shiftable cannot finish inside the horizon")
        starts = list(self.window)
        S = np.zeros((n, len(starts)))
        for j, s in enumerate(starts):
            S[s : s + self.duration, j] = 1.0
        return S


@dataclass(frozen=True)
class BatterySpec:
    """Stored energy follows E_t = E_{t-1} + dt*(eta*p_c - p_d) (energy in
    power-base-hours; dt folded in so per-unit and physical units agree)."""

    capacity: float
    efficiency: float
    e0: float | None = None  # defaults to capacity / 2
    rate_cap: float | None = None  # defaults to full charge in one hour
    smoothing: float = 1e-6  # tie-break on simultaneous charge/discharge

    def __post_init__(self):
        if self.capacity <= 0:
            raise NetworkError("battery capacity must be positive")
        if not 0 <= self.efficiency <= 1:
            raise NetworkError("battery efficiency outside [0, 1]")

    @property
    def initial_energy(self) -> float:
        return self.capacity / 2 if self.e0 is None else self.e0

    @property
    def power_cap(self) -> float:
        return self.capacity if self.rate_cap is None else self.rate_cap


@dataclass(frozen=True)
class HouseSpec:
    """Background draw plus shiftables and optional battery/solar, behind one
    terminal with an apparent-power disk limit."""

    background_p: np.ndarray
    background_q: np.ndarray
    s_max: float
    shiftables: tuple[ShiftableSpec, ...] = ()
    battery: BatterySpec | None = None
    solar: np.ndarray | None = None  # power into the terminal (<= 0)

    n_terminals = 1

    def base_profile(self, n: int) -> np.ndarray:
        base = np.asarray(self.background_p, dtype=float).copy()
        if self.solar is not None:
            base = base + np.asarray(self.solar, dtype=float)
        return base


@dataclass(frozen=True)
class FixedInjectionSpec:
    """Terminal with a fully fixed (p, q) profile; used for restoration."""

    p: np.ndarray
    q: np.ndarray

    n_terminals = 1


ComponentSpec = (
    BusSpec | LineSpec | GeneratorSpec | HouseSpec | FixedInjectionSpec | ShiftableSpec | BatterySpec
)

# quantities each kind pins at its terminals; a connection enforces the
# intersection of both sides (buses pin everything)
_ENFORCED_ROWS = {
    BusSpec: (P, Q, V, TH),
    GeneratorSpec: (P, Q),
    HouseSpec: (P, Q),
    FixedInjectionSpec: (P, Q),
}


def enforced_rows(spec) -> tuple[int, ...]:
    if isinstance(spec, LineSpec):
        return (P, Q, V, TH) if spec.model == AC else (P, TH)
    return _ENFORCED_ROWS[type(spec)]


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Network:
    components: tuple
    terminal_of: tuple  # terminal_of[c] = tuple of terminal ids of component c
    connections: tuple  # ((dev_terminal, bus_terminal), ...)
    horizon: int
    step_minutes: float = 15.0
    v_base_kv: float = 11.0
    s_base_kva: float = 100.0
    per_unit: bool = False

    @property
    def n_terminals(self) -> int:
        return sum(len(ts) for ts in self.terminal_of)

    @property
    def dt_hours(self) -> float:
        return self.step_minutes / 60.0

    @property
    def s_base_mw(self) -> float:
        return self.s_base_kva / 1000.0

    def component_of(self, terminal: int) -> int:
        return self._owner[terminal]

    @property
    def _owner(self):
        owner = getattr(self, "_owner_cache", None)
        if owner is None:
            owner = {}
            for c, ts in enumerate(self.terminal_of):
                for t in ts:
                    owner[t] = c
            object.__setattr__(self, "_owner_cache", owner)
        return owner

    def bus_indices(self):
        return [i for i, c in enumerate(self.components) if isinstance(c, BusSpec)]

    def device_indices(self):
        return [i for i, c in enumerate(self.components) if not isinstance(c, BusSpec)]

    def connection_masks(self) -> np.ndarray:
        """(L, 4, n) boolean array of enforced consensus entries."""
        masks = np.zeros((len(self.connections), 4, self.horizon), dtype=bool)
        for l, (ti, _tj) in enumerate(self.connections):
            dev = self.components[self.component_of(ti)]
            masks[l, list(enforced_rows(dev)), :] = True
        return masks


def build_network(
    specs: list,
    links: list,
    horizon: int,
    step_minutes: float = 15.0,
    v_base_kv: float = 11.0,
    s_base_kva: float = 100.0,
    per_unit: bool = False,
) -> Network:
    """Assemble and validate a Network.

    ``links`` is a list of ((component_index, slot), (component_index, slot))
    pairs.  Bus terminal counts are inferred from the links; all other kinds
    have fixed slot counts.  Terminal ids are dense integers assigned in
    component-declaration order (bus slots sorted ascending).
    """
    if horizon < 1:
        raise NetworkError("horizon must be >= 1")
    used_slots: dict[int, list[int]] = {i: [] for i in range(len(specs))}
    for (ci, si), (cj, sj) in links:
        for c, s in ((ci, si), (cj, sj)):
            if not 0 <= c < len(specs):
                raise NetworkError(f"link references unknown component {c}")
            if s in used_slots[c]:
                raise NetworkError(f"duplicate slot use: component {c} slot {s}")
            used_slots[c].append(s)
        if ci == cj:
            raise NetworkError(f"self-connection on component {ci}")

    # slot validity and terminal id assignment
    terminal_of = []
    term_id = {}
    next_id = 0
    for c, spec in enumerate(specs):
        if isinstance(spec, BusSpec):
            slots = sorted(used_slots[c])
            if not slots:
                raise NetworkError(f"bus {c} has no connections")
        else:
            count = spec.n_terminals
            for s in used_slots[c]:
                if not 0 <= s < count:
                    raise NetworkError(f"component {c} has no slot {s}")
            slots = list(range(count))
        ids = []
        for s in slots:
            term_id[(c, s)] = next_id
            ids.append(next_id)
            next_id += 1
        terminal_of.append(tuple(ids))

    connections = []
    for (ci, si), (cj, sj) in links:
        bus_i = isinstance(specs[ci], BusSpec)
        bus_j = isinstance(specs[cj], BusSpec)
        if bus_i and bus_j:
            raise NetworkError(f"bus-to-bus link between components {ci} and {cj}")
        if not bus_i and not bus_j:
            raise NetworkError(f"device-to-device link between components {ci} and {cj}")
        dev = term_id[(cj, sj)] if bus_i else term_id[(ci, si)]
        bus = term_id[(ci, si)] if bus_i else term_id[(cj, sj)]
        connections.append((dev, bus))

    connected = {t for pair in connections for t in pair}
    for c, ids in enumerate(terminal_of):
        for t in ids:
            if t not in connected:
                raise NetworkError(f"dangling terminal {t} on component {c}")

    for spec in specs:
        _check_profiles(spec, horizon)

    return Network(
        components=tuple(specs),
        terminal_of=tuple(terminal_of),
        connections=tuple(connections),
        horizon=horizon,
        step_minutes=step_minutes,
        v_base_kv=v_base_kv,
        s_base_kva=s_base_kva,
        per_unit=per_unit,
    )


def _check_profiles(spec, n):
    def _len_ok(v):
        return v is None or len(np.asarray(v)) == n

    if isinstance(spec, GeneratorSpec):
        if not (_len_ok(spec.psi) and _len_ok(spec.psi_quad)):
            raise NetworkError("generator cost vectors must match the horizon")
    if isinstance(spec, HouseSpec):
        if not (_len_ok(spec.background_p) and _len_ok(spec.background_q) and _len_ok(spec.solar)):
            raise NetworkError("house profiles must match the horizon")
        for sh in spec.shiftables:
            sh.profile_matrix(n)
    if isinstance(spec, FixedInjectionSpec):
        if not (_len_ok(spec.p) and _len_ok(spec.q)):
            raise NetworkError("fixed injection profiles must match the horizon")
    for name in ("background_p", "background_q", "solar", "p", "q", "psi", "psi_quad"):
        v = getattr(spec, name, None)
        if v is not None and not np.all(np.isfinite(np.asarray(v, dtype=float))):
            raise NetworkError(f"non-finite entries in {name}")


def compute_M(net: Network, masks: np.ndarray | None = None) -> int:
    """Total enforced consensus constraint entries across all connections."""
    if masks is None:
        masks = net.connection_masks()
    M = int(masks.sum())
    if M == 0:
        raise NetworkError("degenerate network: no enforced consensus constraints")
    return M


def to_per_unit(net: Network) -> Network:
    """Scale device parameters from physical units (kW/kVA/kWh, $/MWh) to
    per-unit, folding the step length into the generator cost coefficients.

    Line admittances are always specified per-unit and pass through untouched.
    Idempotence is rejected: rescaling an already-scaled network raises.
    """
    if net.per_unit:
        raise NetworkError("network already in per-unit")
    if net.s_base_kva <= 0 or net.v_base_kv <= 0:
        raise NetworkError("bases must be strictly positive")
    s_kva = net.s_base_kva
    s_mw = net.s_base_mw
    dt_h = net.dt_hours
    scaled = []
    for spec in net.components:
        if isinstance(spec, GeneratorSpec):
            psi = np.asarray(spec.psi, dtype=float)
            psi_quad = np.asarray(spec.psi_quad, dtype=float)
            scaled.append(
                dataclasses.replace(
                    spec,
                    p_lo=spec.p_lo / s_kva,
                    p_hi=spec.p_hi / s_kva,
                    q_lo=spec.q_lo / s_kva,
                    q_hi=spec.q_hi / s_kva,
                    ramp=spec.ramp / s_kva,
                    p0=spec.p0 / s_kva,
                    cost_quad=dt_h * s_mw**2 * psi_quad,
                    cost_lin=-dt_h * s_mw * psi,
                )
            )
        elif isinstance(spec, HouseSpec):
            scaled.append(
                dataclasses.replace(
                    spec,
                    background_p=np.asarray(spec.background_p, dtype=float) / s_kva,
                    background_q=np.asarray(spec.background_q, dtype=float) / s_kva,
                    s_max=spec.s_max / s_kva,
                    shiftables=tuple(
                        dataclasses.replace(sh, p_nom=sh.p_nom / s_kva) for sh in spec.shiftables
                    ),
                    battery=None
                    if spec.battery is None
                    else dataclasses.replace(
                        spec.battery,
                        capacity=spec.battery.capacity / s_kva,
                        e0=None if spec.battery.e0 is None else spec.battery.e0 / s_kva,
                        rate_cap=None
                        if spec.battery.rate_cap is None
                        else spec.battery.rate_cap / s_kva,
                    ),
                    solar=None if spec.solar is None else np.asarray(spec.solar, dtype=float) / s_kva,
                )
            )
        elif isinstance(spec, FixedInjectionSpec):
            scaled.append(
                dataclasses.replace(
                    spec,
                    p=np.asarray(spec.p, dtype=float) / s_kva,
                    q=np.asarray(spec.q, dtype=float) / s_kva,
                )
            )
        else:
            scaled.append(spec)
    return dataclasses.replace(net, components=tuple(scaled), per_unit=True)

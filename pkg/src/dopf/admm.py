"""Two-phase ADMM over the bus/device bipartite partition.

Phase 1 solves every non-bus component against held bus values, phase 2
solves every bus analytically against the fresh device values, then the
connection duals take the step rho * h(y_dev, y_bus) on the enforced entries.
Both residual norms, scaled by 1/sqrt(M), must drop below the tolerance at
the same iteration to stop.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import components as comp
from .network import (
    BusSpec,
    FixedInjectionSpec,
    GeneratorSpec,
    HouseSpec,
    LineSpec,
    Network,
    compute_M,
    consensus_gap,
    signed,
)


class AdmmError(Exception):
    pass


@dataclass
class AdmmConfig:
    rho: float = 0.5
    eps: float = 1e-4
    max_iter: int = 10000
    house_mode: str = "relaxed"  # "relaxed" or "integer"
    workers: int = 0  # 0: read DOPF_WORKERS env var, default sequential


@dataclass
class IterationRecord:
    k: int
    r_p: float
    r_d: float
    t_phase1_max: float
    t_phase2_max: float
    t_parallel_cum: float


@dataclass
class AdmmState:
    y: np.ndarray  # (T, 4, n)
    lam: np.ndarray  # (L, 4, n)
    k: int
    rho: float
    history: list = field(default_factory=list)
    line_warm: dict = field(default_factory=dict)

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.y.copy(), self.lam.copy(), self.k, self.rho,
            list(self.history), dict(self.line_warm),
        )


@dataclass
class Solution:
    objective: float
    y: np.ndarray
    duals: np.ndarray  # locational marginal prices per connection
    profiles: dict  # component index -> HouseProfiles for houses
    converged: bool
    iterations: int
    parallel_time: float
    wall_time: float
    records: list


class AdmmEngine:
    """Holds the immutable network plus precomputed iteration structure."""

    def __init__(self, net: Network, config: AdmmConfig | None = None):
        if not net.per_unit:
            raise AdmmError("ADMM runs on per-unit networks")
        self.net = net
        self.config = config or AdmmConfig()
        self.masks = net.connection_masks()
        self.M = compute_M(net, self.masks)
        self.conn_of_dev_term = {ti: l for l, (ti, _tj) in enumerate(net.connections)}
        self.conn_of_bus_term = {tj: l for l, (_ti, tj) in enumerate(net.connections)}
        self.device_comps = net.device_indices()
        self.bus_comps = net.bus_indices()
        workers = self.config.workers
        if workers == 0:
            workers = int(os.environ.get("DOPF_WORKERS", "1"))
        self.workers = max(1, workers)

    # -- state ------------------------------------------------------------

    def init_state(self, mode: str = "flat", warm: AdmmState | None = None) -> AdmmState:
        n = self.net.horizon
        T = self.net.n_terminals
        L = len(self.net.connections)
        if mode == "flat":
            y = np.zeros((T, 4, n))
            y[:, 2, :] = 1.0  # nominal voltage
            return AdmmState(y, np.zeros((L, 4, n)), 0, self.config.rho)
        if mode == "warm":
            if warm is None:
                raise AdmmError("warm start requires a previous state")
            if warm.y.shape != (T, 4, n) or warm.lam.shape != (L, 4, n):
                raise AdmmError("warm state structurally incompatible with network")
            st = warm.copy()
            st.k = 0
            st.rho = self.config.rho
            st.history = []
            return st
        raise AdmmError(f"unknown init mode {mode!r}")

    # -- single iteration -------------------------------------------------

    def _device_targets(self, c: int, state: AdmmState):
        out = []
        for t in self.net.terminal_of[c]:
            l = self.conn_of_dev_term[t]
            _, bus_t = self.net.connections[l]
            target = -signed(state.y[bus_t]) - state.lam[l] / state.rho
            out.append(comp.ProximalTarget(target, state.rho, self.masks[l]))
        return out

    def _solve_device(self, c: int, state: AdmmState):
        spec = self.net.components[c]
        targets = self._device_targets(c, state)
        t0 = time.perf_counter()
        profiles = None
        warm_out = None
        try:
            if isinstance(spec, GeneratorSpec):
                ys = [comp.generator_solve(spec, targets[0])]
            elif isinstance(spec, HouseSpec):
                y, profiles = comp.house_solve(
                    spec, targets[0], mode=self.config.house_mode,
                    dt_hours=self.net.dt_hours,
                )
                ys = [y]
            elif isinstance(spec, LineSpec):
                y_i, y_j, warm_out = comp.line_solve(
                    spec, targets[0], targets[1], warm=state.line_warm.get(c),
                    check_stall=(state.k % 25 == 0),
                )
                ys = [y_i, y_j]
            elif isinstance(spec, FixedInjectionSpec):
                ys = [comp.fixed_injection_solve(spec, targets[0])]
            else:
                raise AdmmError(f"component {c}: unsupported kind {type(spec).__name__}")
        except comp.ComponentError as exc:
            raise AdmmError(f"component {c} subproblem failed: {exc}") from exc
        return c, ys, profiles, warm_out, time.perf_counter() - t0

    def iterate(self, state: AdmmState, order: list[int] | None = None) -> AdmmState:
        """One full ADMM iteration; returns a new state, input untouched."""
        net = self.net
        st = state.copy()
        lam_prev = state.lam
        devices = self.device_comps if order is None else order

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(lambda c: self._solve_device(c, state), devices))
        else:
            results = [self._solve_device(c, state) for c in devices]

        t1 = 0.0
        profiles = {}
        for c, ys, prof, warm_out, dt in results:
            t1 = max(t1, dt)
            for t, y in zip(net.terminal_of[c], ys):
                st.y[t] = y
            if prof is not None:
                profiles[c] = prof
            if warm_out is not None:
                st.line_warm[c] = warm_out

        t2 = 0.0
        for c in self.bus_comps:
            t0 = time.perf_counter()
            targets = []
            terms = net.terminal_of[c]
            for t in terms:
                l = self.conn_of_bus_term[t]
                dev_t, _ = net.connections[l]
                target = -signed(st.y[dev_t] + st.lam[l] / st.rho)
                targets.append(comp.ProximalTarget(target, st.rho, self.masks[l]))
            for t, y in zip(terms, comp.bus_solve(targets)):
                st.y[t] = y
            t2 = max(t2, time.perf_counter() - t0)

        for l, (dev_t, bus_t) in enumerate(net.connections):
            gap = consensus_gap(st.y[dev_t], st.y[bus_t])
            st.lam[l] = st.lam[l] + st.rho * gap * self.masks[l]

        st.k = state.k + 1
        r_p, r_d = self.residuals(st, lam_prev)
        cum = (state.history[-1].t_parallel_cum if state.history else 0.0) + t1 + t2
        st.history = state.history + [IterationRecord(st.k, r_p, r_d, t1, t2, cum)]
        st.profiles = profiles  # type: ignore[attr-defined]
        return st

    # -- residuals --------------------------------------------------------

    def residuals(self, state: AdmmState, lam_prev: np.ndarray) -> tuple[float, float]:
        """Scaled primal/dual residual norms over the enforced entries."""
        sq_p = 0.0
        sq_d = 0.0
        for l, (dev_t, bus_t) in enumerate(self.net.connections):
            m = self.masks[l]
            gap = consensus_gap(state.y[dev_t], state.y[bus_t])
            sq_p += float((gap[m] ** 2).sum())
            dlam = state.lam[l] - lam_prev[l]
            sq_d += float((dlam[m] ** 2).sum())
        s = 1.0 / np.sqrt(self.M)
        return s * np.sqrt(sq_p), s * np.sqrt(sq_d)

    # -- full run ---------------------------------------------------------

    def run(self, init: str = "flat", warm: AdmmState | None = None):
        t_start = time.perf_counter()
        state = self.init_state(init, warm)
        converged = False
        profiles = {}
        for _ in range(self.config.max_iter):
            state = self.iterate(state)
            profiles = getattr(state, "profiles", profiles)
            rec = state.history[-1]
            if rec.r_p < self.config.eps and rec.r_d < self.config.eps:
                converged = True
                break
        wall = time.perf_counter() - t_start
        objective = comp.eval_objective(self.net, state.y)
        sol = Solution(
            objective=objective,
            y=state.y.copy(),
            duals=state.lam.copy(),
            profiles=profiles,
            converged=converged,
            iterations=state.k,
            parallel_time=state.history[-1].t_parallel_cum if state.history else 0.0,
            wall_time=wall,
            records=state.history,
        )
        return state, sol, converged


# -- convenience wrappers matching the operation-level API -----------------


def init_state(net: Network, mode: str = "flat", warm: AdmmState | None = None,
               config: AdmmConfig | None = None) -> AdmmState:
    return AdmmEngine(net, config).init_state(mode, warm)


def iterate(state: AdmmState, net: Network, config: AdmmConfig | None = None) -> AdmmState:
    return AdmmEngine(net, config).iterate(state)


def run(net: Network, config: AdmmConfig | None = None, init: str = "flat",
        warm: AdmmState | None = None):
    return AdmmEngine(net, config).run(init, warm)


def write_residual_csv(records: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "r_p", "r_d", "t_phase1_max", "t_phase2_max", "t_parallel_cum"])
        for r in records:
            wr.writerow([r.k, r.r_p, r.r_d, r.t_phase1_max, r.t_phase2_max, r.t_parallel_cum])

"""Per-component constraint sets, objectives and proximal subproblem solvers.

Every ``*_solve`` is a pure function of (spec, targets): it returns the exact
minimizer of the component's local objective plus the quadratic proximal pull
toward the targets, over the component's feasible set.  Masked rows (floating
voltage/angle, DC-line reactive power and voltage) are either copied from the
target or pinned by the component model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .network import (
    AC,
    DC,
    P,
    Q,
    TH,
    V,
    BatterySpec,
    FixedInjectionSpec,
    GeneratorSpec,
    HouseSpec,
    LineSpec,
    Network,
    ShiftableSpec,
    enforced_rows,
)


class ComponentError(Exception):
    pass


class ComponentInfeasibleError(ComponentError):
    pass


@dataclass
class ProximalTarget:
    """Quadratic pull (rho/2)*||y - target||^2 over the masked entries.

    target = -A z - lambda/rho, where z is the opposite terminal's current
    value and lambda the connection dual.
    """

    target: np.ndarray  # (4, n)
    rho: float
    mask: np.ndarray  # (4, n) bool


# ---------------------------------------------------------------------------
# Bus
# ---------------------------------------------------------------------------


def bus_solve(targets: list[ProximalTarget]) -> list[np.ndarray]:
    """Exact bus subproblem: power balance and common voltage/angle.

    p_i = t_i - mean(t); q likewise; v and theta are the means of the
    enforced targets.  Entries whose connection leaves a quantity floating
    carry no pull: they absorb the balance residual (q) or take the common
    value (v, theta).
    """
    if len(targets) < 2:
        raise ComponentError("bus needs at least two terminals")
    rho = targets[0].rho
    if any(abs(t.rho - rho) > 0 for t in targets):
        raise ComponentError("bus targets must share rho")
    k = len(targets)
    n = targets[0].target.shape[1]
    tgt = np.stack([t.target for t in targets])  # (k, 4, n)
    msk = np.stack([t.mask for t in targets])

    out = np.zeros_like(tgt)
    # real power: enforced on every kind
    out[:, P] = tgt[:, P] - tgt[:, P].mean(axis=0)

    # reactive power: free entries absorb the enforced-target surplus
    qe = msk[:, Q]
    free = ~qe
    n_free = free.sum(axis=0)
    all_enforced = n_free == 0
    mean_q = tgt[:, Q].mean(axis=0)
    surplus = np.where(qe, tgt[:, Q], 0.0).sum(axis=0)
    out[:, Q] = np.where(
        all_enforced,
        tgt[:, Q] - mean_q,
        np.where(qe, tgt[:, Q], -surplus / np.maximum(n_free, 1)),
    )

    for row, default in ((V, 1.0), (TH, 0.0)):
        e = msk[:, row]
        cnt = e.sum(axis=0)
        common = np.where(
            cnt > 0,
            np.where(e, tgt[:, row], 0.0).sum(axis=0) / np.maximum(cnt, 1),
            default,
        )
        out[:, row] = common[None, :]
    return [out[i] for i in range(k)]


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def generator_solve(spec: GeneratorSpec, target: ProximalTarget) -> np.ndarray:
    """Quadratic-cost dispatch with box bounds and a ramp chain."""
    if spec.cost_quad is None:
        raise ComponentError("generator must be scaled to per-unit before solving")
    rho = target.rho
    t = target.target
    n = t.shape[1]

    lb = np.full(n, spec.p_lo)
    ub = np.full(n, spec.p_hi)
    C = d = None
    if np.isfinite(spec.ramp):
        lb[0] = max(lb[0], spec.p0 - spec.ramp)
        ub[0] = min(ub[0], spec.p0 + spec.ramp)
        if lb[0] > ub[0] + 1e-15:
            raise ComponentInfeasibleError("generator ramp chain infeasible at t=1")
        if n > 1:
            D = np.zeros((n - 1, n))
            idx = np.arange(n - 1)
            D[idx, idx + 1] = 1.0
            D[idx, idx] = -1.0
            C = np.vstack([D, -D])
            d = np.full(2 * (n - 1), spec.ramp)

    H = np.diag(2.0 * spec.cost_quad + rho)
    g = spec.cost_lin - rho * t[P]
    try:
        res = kernels.solve_qp(kernels.QpProblem(H, g, C=C, d=d, lb=lb, ub=ub))
    except kernels.QpInfeasibleError as exc:
        raise ComponentInfeasibleError("generator subproblem infeasible") from exc

    y = t.copy()  # v, theta float: copy targets
    y[P] = res.x
    y[Q] = np.clip(t[Q], spec.q_lo, spec.q_hi)
    return y


def generator_cost(spec: GeneratorSpec, p: np.ndarray) -> float:
    """Horizon generation cost in dollars for a per-unit power profile."""
    return float(spec.cost_quad @ p**2 + spec.cost_lin @ p)


# ---------------------------------------------------------------------------
# Battery
# ---------------------------------------------------------------------------


def _battery_blocks(spec: BatterySpec, n: int, dt_hours: float):
    """Inequality rows for the energy trajectory over (pc, pd) variables."""
    L = np.tril(np.ones((n, n)))
    G = dt_hours * np.hstack([spec.efficiency * L, -L])  # E - e0 = G x
    e0 = spec.initial_energy
    rows = [G, -G, -G[-1:]]
    rhs = [
        np.full(n, spec.capacity - e0),  # E <= cap
        np.full(n, e0),  # E >= 0
        np.array([e0 - spec.capacity / 2]),  # E_n >= cap/2
    ]
    return np.vstack(rows), np.concatenate(rhs), G, e0


def battery_solve(
    spec: BatterySpec, target_p: np.ndarray, rho: float, dt_hours: float
) -> tuple[np.ndarray, np.ndarray]:
    """Closest feasible net power profile to the target; returns (p, E)."""
    n = len(target_p)
    B = np.hstack([np.eye(n), -np.eye(n)])  # p = pc - pd
    H = rho * B.T @ B + 2.0 * spec.smoothing * np.eye(2 * n)
    g = -rho * B.T @ np.asarray(target_p, dtype=float)
    C, d, G, e0 = _battery_blocks(spec, n, dt_hours)
    cap = spec.power_cap
    try:
        res = kernels.solve_qp(
            kernels.QpProblem(H, g, C=C, d=d, lb=np.zeros(2 * n), ub=np.full(2 * n, cap))
        )
    except kernels.QpInfeasibleError as exc:
        raise ComponentInfeasibleError(
            "battery cannot reach the end-of-horizon energy floor"
        ) from exc
    p = B @ res.x
    E = e0 + G @ res.x
    return p, E


# ---------------------------------------------------------------------------
# Shiftable load
# ---------------------------------------------------------------------------


def shiftable_solve(
    spec: ShiftableSpec, target_p: np.ndarray, rho: float, mode: str = "relaxed"
) -> tuple[np.ndarray, np.ndarray]:
    """Proximal start-time choice; relaxed QP over u or exact enumeration.

    Returns (p profile, u) with u a full-horizon vector.
    """
    n = len(target_p)
    S = spec.profile_matrix(n)
    w = S.shape[1]
    t = np.asarray(target_p, dtype=float)
    starts = list(spec.window)

    if mode == "integer":
        best_j, best_f = 0, None
        for j in range(w):
            f = float(((spec.p_nom * S[:, j] - t) ** 2).sum())
            if best_f is None or f < best_f - 1e-15:
                best_f, best_j = f, j
        u_w = np.zeros(w)
        u_w[best_j] = 1.0
    elif mode == "relaxed":
        H = rho * spec.p_nom**2 * (S.T @ S) + 1e-11 * np.eye(w)
        g = -rho * spec.p_nom * (S.T @ t)
        res = kernels.solve_qp(
            kernels.QpProblem(
                H, g, A=np.ones((1, w)), b=np.array([1.0]), lb=np.zeros(w), ub=np.ones(w)
            )
        )
        u_w = res.x
    else:
        raise ValueError(f"unknown mode {mode!r}")

    u = np.zeros(n)
    for j, s in enumerate(starts):
        u[s] = u_w[j]
    return spec.p_nom * (S @ u_w), u


# ---------------------------------------------------------------------------
# House
# ---------------------------------------------------------------------------


def _house_p_limit(spec: HouseSpec, n: int) -> np.ndarray:
    q = np.asarray(spec.background_q, dtype=float)
    room = spec.s_max**2 - q**2
    if (room < -1e-12).any():
        raise ComponentError("house background reactive power alone violates the apparent limit")
    return np.sqrt(np.maximum(room, 0.0))


@dataclass
class HouseProfiles:
    p_total: np.ndarray
    q_total: np.ndarray
    u: list[np.ndarray]  # full-horizon start indicators per shiftable
    battery_p: np.ndarray | None
    battery_energy: np.ndarray | None
    objective: float  # value of the supplied quadratic (w, c) objective


def house_inner(
    spec: HouseSpec,
    w: np.ndarray,
    c: np.ndarray,
    mode: str,
    dt_hours: float,
) -> HouseProfiles:
    """Minimize sum_t w_t p_t^2 + c_t p_t over the house's joint feasible set.

    p is total terminal real power.  Relaxed mode solves one convex QP over
    all device variables; integer mode enumerates shiftable start tuples with
    an inner battery QP per tuple.  The apparent-power disk reduces to a box
    on p because the house's reactive power is the fixed background profile.
    """
    n = len(spec.background_p)
    w = np.asarray(w, dtype=float)
    c = np.asarray(c, dtype=float)
    base = spec.base_profile(n)
    pmax = _house_p_limit(spec, n)
    if (np.abs(np.asarray(spec.background_p)) > pmax + 1e-12).any():
        raise ComponentError("house background power alone violates the apparent limit")

    mats = [sh.profile_matrix(n) for sh in spec.shiftables]

    if mode == "relaxed":
        return _house_relaxed(spec, w, c, base, pmax, mats, dt_hours)
    if mode == "integer":
        return _house_integer(spec, w, c, base, pmax, mats, dt_hours)
    raise ValueError(f"unknown mode {mode!r}")


def _objective_value(w, c, p):
    return float(w @ p**2 + c @ p)


def _house_relaxed(spec, w, c, base, pmax, mats, dt_hours):
    n = len(base)
    has_bat = spec.battery is not None
    blocks = []
    if has_bat:
        blocks.append(np.hstack([np.eye(n), -np.eye(n)]))
    for sh, S in zip(spec.shiftables, mats):
        blocks.append(sh.p_nom * S)
    if not blocks:
        p = base.copy()
        if (np.abs(p) > pmax + 1e-9).any():
            raise ComponentInfeasibleError("fixed house profile violates the apparent limit")
        return HouseProfiles(
            p, np.asarray(spec.background_q, dtype=float),
            [np.zeros(n) for _ in spec.shiftables], None, None, _objective_value(w, c, p),
        )

    B = np.hstack(blocks)
    dim = B.shape[1]
    W = np.diag(2.0 * w)
    H = B.T @ W @ B + 1e-11 * np.eye(dim)
    g = B.T @ (2.0 * w * base + c)

    lb = np.full(dim, -np.inf)
    ub = np.full(dim, np.inf)
    off = 0
    if has_bat:
        cap = spec.battery.power_cap
        lb[: 2 * n] = 0.0
        ub[: 2 * n] = cap
        H[: 2 * n, : 2 * n] += 2.0 * spec.battery.smoothing * np.eye(2 * n)
        off = 2 * n
    A_rows, b_rows = [], []
    for S in mats:
        wk = S.shape[1]
        lb[off : off + wk] = 0.0
        ub[off : off + wk] = 1.0
        row = np.zeros(dim)
        row[off : off + wk] = 1.0
        A_rows.append(row)
        b_rows.append(1.0)
        off += wk
    A = np.vstack(A_rows) if A_rows else None
    b = np.array(b_rows) if A_rows else None

    C_list = [B, -B]
    d_list = [pmax - base, pmax + base]
    if has_bat:
        Ce, de, _, _ = _battery_blocks(spec.battery, n, dt_hours)
        Cb = np.zeros((Ce.shape[0], dim))
        Cb[:, : 2 * n] = Ce
        C_list.append(Cb)
        d_list.append(de)
    C = np.vstack(C_list)
    d = np.concatenate(d_list)

    try:
        res = kernels.solve_qp(kernels.QpProblem(H, g, A=A, b=b, C=C, d=d, lb=lb, ub=ub))
    except kernels.QpInfeasibleError as exc:
        raise ComponentInfeasibleError("house subproblem infeasible") from exc

    return _unpack_house(spec, res.x, base, mats, dt_hours, w, c)


def _unpack_house(spec, x, base, mats, dt_hours, w, c):
    n = len(base)
    has_bat = spec.battery is not None
    off = 0
    bat_p = bat_E = None
    if has_bat:
        pc, pd = x[:n], x[n : 2 * n]
        bat_p = pc - pd
        L = np.tril(np.ones((n, n)))
        bat_E = spec.battery.initial_energy + dt_hours * (
            spec.battery.efficiency * (L @ pc) - L @ pd
        )
        off = 2 * n
    u_full = []
    p = base.copy()
    if has_bat:
        p = p + bat_p
    for sh, S in zip(spec.shiftables, mats):
        wk = S.shape[1]
        u_w = x[off : off + wk]
        off += wk
        u = np.zeros(n)
        for j, s in enumerate(sh.window):
            u[s] = u_w[j]
        u_full.append(u)
        p = p + sh.p_nom * (S @ u_w)
    return HouseProfiles(
        p, np.asarray(spec.background_q, dtype=float), u_full, bat_p, bat_E,
        _objective_value(w, c, p),
    )


def _house_integer(spec, w, c, base, pmax, mats, dt_hours):
    n = len(base)
    has_bat = spec.battery is not None
    start_lists = [list(sh.window) for sh in spec.shiftables]

    def tuples(idx=0):
        if idx == len(start_lists):
            yield ()
            return
        for s in start_lists[idx]:
            for rest in tuples(idx + 1):
                yield (s,) + rest

    best = None
    for starts in tuples():
        p_shift = np.zeros(n)
        for sh, s in zip(spec.shiftables, starts):
            p_shift[s : s + sh.duration] += sh.p_nom
        base_k = base + p_shift
        if has_bat:
            bat = spec.battery
            cap = bat.power_cap
            B = np.hstack([np.eye(n), -np.eye(n)])
            H = B.T @ np.diag(2.0 * w) @ B + 2.0 * bat.smoothing * np.eye(2 * n)
            g = B.T @ (2.0 * w * base_k + c)
            Ce, de, G, e0 = _battery_blocks(bat, n, dt_hours)
            C = np.vstack([Ce, B, -B])
            d = np.concatenate([de, pmax - base_k, pmax + base_k])
            try:
                res = kernels.solve_qp(
                    kernels.QpProblem(
                        H, g, C=C, d=d, lb=np.zeros(2 * n), ub=np.full(2 * n, cap)
                    )
                )
            except kernels.QpInfeasibleError:
                continue
            p = base_k + B @ res.x
            f = _objective_value(w, c, p) + bat.smoothing * float(res.x @ res.x)
            cand = (f, starts, res.x)
        else:
            if (np.abs(base_k) > pmax + 1e-9).any():
                continue
            f = _objective_value(w, c, base_k)
            cand = (f, starts, np.zeros(0))
        if best is None or cand[0] < best[0] - 1e-12:
            best = cand

    if best is None:
        raise ComponentInfeasibleError("no integer-feasible start tuple for house")

    _, starts, xbat = best
    x = list(xbat)
    for sh, s, S in zip(spec.shiftables, starts, mats):
        u_w = np.zeros(S.shape[1])
        u_w[list(sh.window).index(s)] = 1.0
        x.extend(u_w)
    return _unpack_house(spec, np.array(x), base, mats, dt_hours, w, c)


def house_solve(
    spec: HouseSpec,
    target: ProximalTarget,
    mode: str = "relaxed",
    dt_hours: float = 0.25,
) -> tuple[np.ndarray, HouseProfiles]:
    """Proximal house subproblem over (p, q); v and theta copy their targets."""
    t = target.target
    w = np.full(t.shape[1], target.rho / 2.0)
    c = -target.rho * t[P]
    prof = house_inner(spec, w, c, mode, dt_hours)
    y = t.copy()
    y[P] = prof.p_total
    y[Q] = prof.q_total
    return y, prof


# ---------------------------------------------------------------------------
# Line
# ---------------------------------------------------------------------------


def line_solve(
    spec: LineSpec,
    target_i: ProximalTarget,
    target_j: ProximalTarget,
    warm: np.ndarray | None = None,
    check_stall: bool = True,
):
    """Two-terminal line subproblem; steps decouple.

    AC: local solve of the 3-variable reduced per-step problem.  DC: v = 1,
    q = 0, lossless closed form with the flow/angle box projected in the
    angle-difference coordinate.

    Returns (y_i, y_j, warm) with warm reusable on the next iteration.
    """
    ti, tj = target_i.target, target_j.target
    if spec.model == DC:
        b = spec.b
        e = ti[TH] - tj[TH]
        delta = (2.0 * b * (tj[P] - ti[P]) + e) / (4.0 * b**2 + 1.0)
        dmax = min(spec.theta_max, spec.s_max / abs(b))
        delta = np.clip(delta, -dmax, dmax)
        theta_m = 0.5 * (ti[TH] + tj[TH])
        n = ti.shape[1]
        y_i = np.array([-b * delta, np.zeros(n), np.ones(n), theta_m + 0.5 * delta])
        y_j = np.array([b * delta, np.zeros(n), np.ones(n), theta_m - 0.5 * delta])
        return y_i, y_j, None

    lim = kernels.LineLimits(spec.s_max, spec.v_lo, spec.v_hi, spec.theta_max)
    return kernels.solve_line_steps_ac(
        spec.g, spec.b, lim, ti, tj, warm=warm, check_stall=check_stall
    )


def line_residuals(spec: LineSpec, y_i: np.ndarray, y_j: np.ndarray):
    """Max violation of the line's flow equations and operating limits."""
    if spec.model == DC:
        delta = y_i[TH] - y_j[TH]
        eq = max(
            np.abs(y_i[P] + spec.b * delta).max(),
            np.abs(y_i[P] + y_j[P]).max(),
            np.abs(y_i[Q]).max(),
            np.abs(y_i[V] - 1.0).max(),
            np.abs(y_j[V] - 1.0).max(),
        )
        ineq = max(
            (np.abs(y_i[P]) - spec.s_max).max(),
            (np.abs(delta) - spec.theta_max).max(),
        )
        return eq, max(ineq, 0.0)
    delta = y_i[TH] - y_j[TH]
    p_i, q_i, p_j, q_j = kernels.line_flows(spec.g, spec.b, y_i[V], y_j[V], delta)
    eq = max(
        np.abs(y_i[P] - p_i).max(),
        np.abs(y_i[Q] - q_i).max(),
        np.abs(y_j[P] - p_j).max(),
        np.abs(y_j[Q] - q_j).max(),
    )
    ineq = max(
        (np.hypot(y_i[P], y_i[Q]) - spec.s_max).max(),
        (np.hypot(y_j[P], y_j[Q]) - spec.s_max).max(),
        (y_i[V] - spec.v_hi).max(),
        (spec.v_lo - y_i[V]).max(),
        (y_j[V] - spec.v_hi).max(),
        (spec.v_lo - y_j[V]).max(),
        (np.abs(delta) - spec.theta_max).max(),
    )
    return eq, max(float(ineq), 0.0)


# ---------------------------------------------------------------------------
# Fixed injection
# ---------------------------------------------------------------------------


def fixed_injection_solve(spec: FixedInjectionSpec, target: ProximalTarget) -> np.ndarray:
    y = target.target.copy()
    y[P] = np.asarray(spec.p, dtype=float)
    y[Q] = np.asarray(spec.q, dtype=float)
    return y


# ---------------------------------------------------------------------------
# Network objective
# ---------------------------------------------------------------------------


def eval_objective(net: Network, y: np.ndarray) -> float:
    """Total generation cost in dollars; only generators contribute."""
    if not net.per_unit:
        raise ComponentError("objective is evaluated on a per-unit network")
    total = 0.0
    for ci, spec in enumerate(net.components):
        if isinstance(spec, GeneratorSpec):
            term = net.terminal_of[ci][0]
            total += generator_cost(spec, y[term, P])
    return total

"""Centralized small-instance reference solvers.

These assemble the whole network into a single problem with connected
terminals merged into shared variables, giving ground truth for validating
the distributed solver on desk-scale instances.  The DC model is an exact
convex solve (cvxpy); the AC model is a local nonlinear solve warm started
from the DC point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import components as comp
from .network import (
    AC,
    DC,
    BusSpec,
    FixedInjectionSpec,
    GeneratorSpec,
    HouseSpec,
    LineSpec,
    Network,
)


class OracleError(Exception):
    pass


@dataclass
class CentralSolution:
    objective: float
    bus_theta: dict  # bus component index -> (n,) angles
    bus_v: dict
    gen_p: dict
    gen_q: dict
    house_p: dict
    house_x: dict  # raw device variable vectors
    kkt_residual: float


class _Assembly:
    """Bus-merged view of a per-unit network."""

    def __init__(self, net: Network):
        if not net.per_unit:
            raise OracleError("oracle expects a per-unit network")
        self.net = net
        self.n = net.horizon
        self.buses = net.bus_indices()
        self.bus_pos = {c: i for i, c in enumerate(self.buses)}
        term_bus = {}
        for c in self.buses:
            for t in net.terminal_of[c]:
                term_bus[t] = c
        self.lines = []  # (comp idx, bus_a, bus_b) with terminal order
        self.gens = []  # (comp idx, bus)
        self.houses = []  # (comp idx, bus)
        self.fixed = []  # (comp idx, bus)
        conn_by_dev = {d: b for d, b in net.connections}
        for c, spec in enumerate(net.components):
            terms = net.terminal_of[c]
            if isinstance(spec, LineSpec):
                self.lines.append((c, term_bus[conn_by_dev[terms[0]]], term_bus[conn_by_dev[terms[1]]]))
            elif isinstance(spec, GeneratorSpec):
                self.gens.append((c, term_bus[conn_by_dev[terms[0]]]))
            elif isinstance(spec, HouseSpec):
                self.houses.append((c, term_bus[conn_by_dev[terms[0]]]))
            elif isinstance(spec, FixedInjectionSpec):
                self.fixed.append((c, term_bus[conn_by_dev[terms[0]]]))

    def house_blocks(self, c: int):
        """(base, B, lb, ub, A_eq rows, ineq rows) for a house's device vars."""
        spec = self.net.components[c]
        n = self.n
        base = spec.base_profile(n)
        pmax = comp._house_p_limit(spec, n)
        blocks, lb, ub = [], [], []
        eqs = []
        ineq_C, ineq_d = [], []
        off = 0
        if spec.battery is not None:
            blocks.append(np.hstack([np.eye(n), -np.eye(n)]))
            cap = spec.battery.power_cap
            lb += [0.0] * (2 * n)
            ub += [cap] * (2 * n)
            Ce, de, _, _ = comp._battery_blocks(spec.battery, n, self.net.dt_hours)
            ineq_C.append((0, Ce))
            ineq_d.append(de)
            off = 2 * n
        for sh in spec.shiftables:
            S = sh.profile_matrix(n)
            w = S.shape[1]
            blocks.append(sh.p_nom * S)
            lb += [0.0] * w
            ub += [1.0] * w
            eqs.append((off, w))
            off += w
        B = np.hstack(blocks) if blocks else np.zeros((n, 0))
        dim = B.shape[1]
        C_rows = np.zeros((sum(c_.shape[0] for _, c_ in ineq_C), dim))
        r = 0
        for o, Ce in ineq_C:
            C_rows[r : r + Ce.shape[0], o : o + Ce.shape[1]] = Ce
            r += Ce.shape[0]
        d_rows = np.concatenate(ineq_d) if ineq_d else np.zeros(0)
        return base, B, np.array(lb), np.array(ub), eqs, C_rows, d_rows, pmax


# ---------------------------------------------------------------------------
# DC exact solve (cvxpy)
# ---------------------------------------------------------------------------


def _solve_dc(net: Network) -> CentralSolution:
    import cvxpy as cp

    asm = _Assembly(net)
    n = asm.n
    nb = len(asm.buses)
    theta = cp.Variable((nb, n))
    cons = [theta[0, :] == 0]
    obj = 0

    gen_vars = {}
    for c, bus in asm.gens:
        spec = net.components[c]
        p = cp.Variable(n)
        q = cp.Variable(n)
        cons += [p >= spec.p_lo, p <= spec.p_hi, q >= spec.q_lo, q <= spec.q_hi]
        if np.isfinite(spec.ramp):
            cons += [p[0] >= spec.p0 - spec.ramp, p[0] <= spec.p0 + spec.ramp]
            if n > 1:
                cons += [cp.abs(p[1:] - p[:-1]) <= spec.ramp]
        obj = obj + cp.sum(cp.multiply(spec.cost_quad, cp.square(p))) + spec.cost_lin @ p
        gen_vars[c] = (p, q)

    house_vars = {}
    house_p = {}
    for c, bus in asm.houses:
        spec = net.components[c]
        base, B, lb, ub, eqs, C_rows, d_rows, pmax = asm.house_blocks(c)
        if B.shape[1]:
            x = cp.Variable(B.shape[1])
            cons += [x >= lb, x <= ub]
            for off, w in eqs:
                cons += [cp.sum(x[off : off + w]) == 1]
            if C_rows.shape[0]:
                cons += [C_rows @ x <= d_rows]
            p = base + B @ x
            if spec.battery is not None:
                obj = obj + spec.battery.smoothing * cp.sum_squares(x[: 2 * n])
        else:
            x = None
            p = base
            if (np.abs(base) > pmax + 1e-9).any():
                raise OracleError("fixed house profile violates the apparent limit")
        if x is not None:
            cons += [p <= pmax, p >= -pmax]
        house_vars[c] = x
        house_p[c] = p

    # bus real power balance with lossless line flows
    for c, bus_a, bus_b in asm.lines:
        spec = net.components[c]
        if spec.model != DC:
            raise OracleError("DC oracle requires DC line models")
    for bi, bus in enumerate(asm.buses):
        expr = 0
        for c, b in asm.gens:
            if b == bus:
                expr = expr + gen_vars[c][0]
        for c, b in asm.houses:
            if b == bus:
                expr = expr + house_p[c]
        for c, b in asm.fixed:
            if b == bus:
                expr = expr + np.asarray(net.components[c].p, dtype=float)
        for c, bus_i, bus_j in asm.lines:
            spec = net.components[c]
            if bus_i == bus:
                expr = expr + (-spec.b) * (theta[asm.bus_pos[bus_i]] - theta[asm.bus_pos[bus_j]])
            elif bus_j == bus:
                expr = expr + (-spec.b) * (theta[asm.bus_pos[bus_j]] - theta[asm.bus_pos[bus_i]])
        cons += [expr == 0]

    for c, bus_i, bus_j in asm.lines:
        spec = net.components[c]
        d = theta[asm.bus_pos[bus_i]] - theta[asm.bus_pos[bus_j]]
        cons += [cp.abs(d) <= spec.theta_max, cp.abs(spec.b * d) <= spec.s_max]

    problem = cp.Problem(cp.Minimize(obj), cons)
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise OracleError(f"centralized DC solve failed: {problem.status}")

    gen_cost = 0.0
    for c, _ in asm.gens:
        spec = net.components[c]
        gen_cost += comp.generator_cost(spec, gen_vars[c][0].value)
    return CentralSolution(
        objective=gen_cost,
        bus_theta={b: theta.value[i] for b, i in zip(asm.buses, range(nb))},
        bus_v={b: np.ones(n) for b in asm.buses},
        gen_p={c: gen_vars[c][0].value for c, _ in asm.gens},
        gen_q={c: gen_vars[c][1].value for c, _ in asm.gens},
        house_p={c: (np.asarray(house_p[c].value) if hasattr(house_p[c], "value") else house_p[c])
                 for c, _ in asm.houses},
        house_x={c: (house_vars[c].value if house_vars[c] is not None else np.zeros(0))
                 for c, _ in asm.houses},
        kkt_residual=0.0,
    )


# ---------------------------------------------------------------------------
# AC local solve (scipy SLSQP from the DC point)
# ---------------------------------------------------------------------------


def _flow_partials(g, b, v_i, v_j, delta):
    cs, sn = np.cos(delta), np.sin(delta)
    vij = v_i * v_j
    p_i = g * v_i**2 - g * vij * cs - b * vij * sn
    q_i = -b * v_i**2 + b * vij * cs - g * vij * sn
    dp = (2 * g * v_i - g * v_j * cs - b * v_j * sn,
          -g * v_i * cs - b * v_i * sn,
          g * vij * sn - b * vij * cs)
    dq = (-2 * b * v_i + b * v_j * cs - g * v_j * sn,
          b * v_i * cs - g * v_i * sn,
          -b * vij * sn - g * vij * cs)
    return p_i, q_i, dp, dq


def _solve_ac(net: Network) -> CentralSolution:
    asm = _Assembly(net)
    n = asm.n
    for c, *_ in asm.lines:
        if net.components[c].model != AC:
            raise OracleError("AC oracle requires AC line models")

    # DC warm start on a DC twin of the network
    import dataclasses as dc

    dc_net = dc.replace(
        net,
        components=tuple(
            dc.replace(s, model=DC) if isinstance(s, LineSpec) else s for s in net.components
        ),
    )
    start = _solve_dc(dc_net)

    # variable layout
    idx = {}
    off = 0

    def alloc(key, size):
        nonlocal off
        idx[key] = (off, off + size)
        off += size

    for b in asm.buses:
        alloc(("v", b), n)
        alloc(("th", b), n)
    for c, _ in asm.gens:
        alloc(("gp", c), n)
        alloc(("gq", c), n)
    house_meta = {}
    for c, _ in asm.houses:
        blocks = asm.house_blocks(c)
        house_meta[c] = blocks
        alloc(("hx", c), blocks[1].shape[1])
    dim = off

    def seg(x, key):
        a, b_ = idx[key]
        return x[a:b_]

    # bounds
    lb = np.full(dim, -np.inf)
    ub = np.full(dim, np.inf)
    v_lo = {b: 0.5 for b in asm.buses}
    v_hi = {b: 1.5 for b in asm.buses}
    for c, bus_i, bus_j in asm.lines:
        spec = net.components[c]
        for b in (bus_i, bus_j):
            v_lo[b] = max(v_lo[b], spec.v_lo)
            v_hi[b] = min(v_hi[b], spec.v_hi)
    for b in asm.buses:
        a, e = idx[("v", b)]
        lb[a:e], ub[a:e] = v_lo[b], v_hi[b]
    ref = asm.buses[0]
    a, e = idx[("th", ref)]
    lb[a:e] = ub[a:e] = 0.0
    for c, _ in asm.gens:
        spec = net.components[c]
        a, e = idx[("gp", c)]
        lb[a:e], ub[a:e] = spec.p_lo, spec.p_hi
        a, e = idx[("gq", c)]
        lb[a:e], ub[a:e] = spec.q_lo, spec.q_hi
    for c, _ in asm.houses:
        base, B, hlb, hub, eqs, C_rows, d_rows, pmax = house_meta[c]
        a, e = idx[("hx", c)]
        lb[a:e], ub[a:e] = hlb, hub

    # objective (generation cost + battery smoothing)
    def objective(x):
        f = 0.0
        grad = np.zeros(dim)
        for c, _ in asm.gens:
            spec = net.components[c]
            p = seg(x, ("gp", c))
            f += spec.cost_quad @ p**2 + spec.cost_lin @ p
            a, e = idx[("gp", c)]
            grad[a:e] = 2 * spec.cost_quad * p + spec.cost_lin
        for c, _ in asm.houses:
            spec = net.components[c]
            if spec.battery is not None:
                a, e = idx[("hx", c)]
                xb = x[a : a + 2 * n]
                f += spec.battery.smoothing * xb @ xb
                grad[a : a + 2 * n] += 2 * spec.battery.smoothing * xb
        return f, grad

    def balance(x):
        """Stacked (p then q) bus balance residuals with jacobian."""
        nb = len(asm.buses)
        res = np.zeros((2, nb, n))
        jac = np.zeros((2, nb, n, dim))
        for c, bus in asm.gens:
            bi = asm.bus_pos[bus]
            a, e = idx[("gp", c)]
            res[0, bi] += x[a:e]
            jac[0, bi, np.arange(n), np.arange(a, e)] += 1.0
            a, e = idx[("gq", c)]
            res[1, bi] += x[a:e]
            jac[1, bi, np.arange(n), np.arange(a, e)] += 1.0
        for c, bus in asm.houses:
            bi = asm.bus_pos[bus]
            base, B, *_ = house_meta[c]
            a, e = idx[("hx", c)]
            res[0, bi] += base + B @ x[a:e]
            jac[0, bi, :, a:e] += B
            res[1, bi] += np.asarray(net.components[c].background_q, dtype=float)
        for c, bus in asm.fixed:
            bi = asm.bus_pos[bus]
            res[0, bi] += np.asarray(net.components[c].p, dtype=float)
            res[1, bi] += np.asarray(net.components[c].q, dtype=float)
        for c, bus_i, bus_j in asm.lines:
            spec = net.components[c]
            for (ba, bb, sgn) in ((bus_i, bus_j, 1.0), (bus_j, bus_i, -1.0)):
                va = seg(x, ("v", ba))
                vb = seg(x, ("v", bb))
                delta = sgn * (seg(x, ("th", bus_i)) - seg(x, ("th", bus_j)))
                p, q, dp, dq = _flow_partials(spec.g, spec.b, va, vb, delta)
                bi = asm.bus_pos[ba]
                res[0, bi] += p
                res[1, bi] += q
                ia = idx[("v", ba)][0]
                ib = idx[("v", bb)][0]
                iti = idx[("th", bus_i)][0]
                itj = idx[("th", bus_j)][0]
                r = np.arange(n)
                jac[0, bi, r, ia + r] += dp[0]
                jac[0, bi, r, ib + r] += dp[1]
                jac[0, bi, r, iti + r] += sgn * dp[2]
                jac[0, bi, r, itj + r] -= sgn * dp[2]
                jac[1, bi, r, ia + r] += dq[0]
                jac[1, bi, r, ib + r] += dq[1]
                jac[1, bi, r, iti + r] += sgn * dq[2]
                jac[1, bi, r, itj + r] -= sgn * dq[2]
        return res.reshape(-1), jac.reshape(-1, dim)

    def line_limits(x):
        """Inequality residuals h(x) >= 0 with jacobian."""
        rows = []
        jrows = []
        for c, bus_i, bus_j in asm.lines:
            spec = net.components[c]
            vi = seg(x, ("v", bus_i))
            vj = seg(x, ("v", bus_j))
            delta = seg(x, ("th", bus_i)) - seg(x, ("th", bus_j))
            for (va, vb, sgn, ia, ib) in (
                (vi, vj, 1.0, idx[("v", bus_i)][0], idx[("v", bus_j)][0]),
                (vj, vi, -1.0, idx[("v", bus_j)][0], idx[("v", bus_i)][0]),
            ):
                p, q, dp, dq = _flow_partials(spec.g, spec.b, va, vb, sgn * delta)
                val = spec.s_max**2 - p**2 - q**2
                J = np.zeros((n, dim))
                r = np.arange(n)
                iti = idx[("th", bus_i)][0]
                itj = idx[("th", bus_j)][0]
                J[r, ia + r] = -2 * p * dp[0] - 2 * q * dq[0]
                J[r, ib + r] = -2 * p * dp[1] - 2 * q * dq[1]
                J[r, iti + r] = sgn * (-2 * p * dp[2] - 2 * q * dq[2])
                J[r, itj + r] = -sgn * (-2 * p * dp[2] - 2 * q * dq[2])
                rows.append(val)
                jrows.append(J)
            # angle box
            J = np.zeros((n, dim))
            r = np.arange(n)
            iti = idx[("th", bus_i)][0]
            itj = idx[("th", bus_j)][0]
            J[r, iti + r] = -1.0
            J[r, itj + r] = 1.0
            rows.append(spec.theta_max - delta)
            jrows.append(J)
            rows.append(spec.theta_max + delta)
            jrows.append(-J)
        for c, _ in asm.houses:
            base, B, hlb, hub, eqs, C_rows, d_rows, pmax = house_meta[c]
            a, e = idx[("hx", c)]
            p = base + B @ x[a:e]
            J = np.zeros((n, dim))
            J[:, a:e] = B
            rows.append(pmax - p)
            jrows.append(-J)
            rows.append(pmax + p)
            jrows.append(J)
            if C_rows.shape[0]:
                J = np.zeros((C_rows.shape[0], dim))
                J[:, a:e] = -C_rows
                rows.append(d_rows - C_rows @ x[a:e])
                jrows.append(J)
        for c, _ in asm.gens:
            spec = net.components[c]
            if np.isfinite(spec.ramp) and n > 1:
                a, e = idx[("gp", c)]
                p = x[a:e]
                D = np.zeros((n - 1, dim))
                r = np.arange(n - 1)
                D[r, a + r + 1] = 1.0
                D[r, a + r] = -1.0
                rows.append(spec.ramp - (p[1:] - p[:-1]))
                jrows.append(-D)
                rows.append(spec.ramp + (p[1:] - p[:-1]))
                jrows.append(D)
        if not rows:
            return np.zeros(0), np.zeros((0, dim))
        return np.concatenate(rows), np.vstack(jrows)

    eq_rows = []
    for c, _ in asm.houses:
        base, B, hlb, hub, eqs, *_ = house_meta[c]
        a, _e = idx[("hx", c)]
        for off_u, w in eqs:
            row = np.zeros(dim)
            row[a + off_u : a + off_u + w] = 1.0
            eq_rows.append(row)
    A_eq = np.vstack(eq_rows) if eq_rows else np.zeros((0, dim))

    # initial point from the DC solution
    x0 = np.zeros(dim)
    for b in asm.buses:
        a, e = idx[("v", b)]
        x0[a:e] = np.clip(1.0, lb[a:e], ub[a:e])
        a, e = idx[("th", b)]
        x0[a:e] = start.bus_theta[b]
    for c, _ in asm.gens:
        a, e = idx[("gp", c)]
        x0[a:e] = np.clip(start.gen_p[c], lb[a:e], ub[a:e])
        a, e = idx[("gq", c)]
        x0[a:e] = np.clip(0.0, lb[a:e], ub[a:e])
    for c, _ in asm.houses:
        a, e = idx[("hx", c)]
        if e > a:
            x0[a:e] = np.clip(start.house_x[c], lb[a:e], ub[a:e])

    constraints = [
        {"type": "eq", "fun": lambda x: balance(x)[0], "jac": lambda x: balance(x)[1]},
        {"type": "ineq", "fun": lambda x: line_limits(x)[0], "jac": lambda x: line_limits(x)[1]},
    ]
    if A_eq.shape[0]:
        constraints.append(
            {"type": "eq", "fun": lambda x: A_eq @ x - 1.0, "jac": lambda x: A_eq}
        )

    res = scipy.optimize.minimize(
        objective, x0, jac=True, method="SLSQP",
        bounds=list(zip(lb, ub)), constraints=constraints,
        options={"maxiter": 400, "ftol": 1e-12},
    )
    if not res.success and res.status != 8:
        # one continuation retry from a slightly perturbed start
        res2 = scipy.optimize.minimize(
            objective, res.x, jac=True, method="SLSQP",
            bounds=list(zip(lb, ub)), constraints=constraints,
            options={"maxiter": 400, "ftol": 1e-12},
        )
        if res2.fun <= res.fun or not res.success:
            res = res2
    x = res.x
    viol = np.abs(balance(x)[0]).max(initial=0.0)
    ineq_v, _ = line_limits(x)
    viol = max(viol, float(np.maximum(-ineq_v, 0.0).max(initial=0.0)))
    if viol > 1e-6:
        raise OracleError(f"centralized AC solve infeasible (violation {viol:.2e})")

    gen_cost = 0.0
    gen_p, gen_q = {}, {}
    for c, _ in asm.gens:
        spec = net.components[c]
        p = seg(x, ("gp", c))
        gen_p[c] = p.copy()
        gen_q[c] = seg(x, ("gq", c)).copy()
        gen_cost += comp.generator_cost(spec, p)
    return CentralSolution(
        objective=gen_cost,
        bus_theta={b: seg(x, ("th", b)).copy() for b in asm.buses},
        bus_v={b: seg(x, ("v", b)).copy() for b in asm.buses},
        gen_p=gen_p,
        gen_q=gen_q,
        house_p={
            c: house_meta[c][0] + house_meta[c][1] @ seg(x, ("hx", c)) for c, _ in asm.houses
        },
        house_x={c: seg(x, ("hx", c)).copy() for c, _ in asm.houses},
        kkt_residual=float(viol),
    )


def solve_centralized(net: Network, model: str = DC) -> CentralSolution:
    """Monolithic solve of the whole network; model selects line physics."""
    if model == DC:
        return _solve_dc(net)
    if model == AC:
        return _solve_ac(net)
    raise ValueError(f"unknown model {model!r}")


def brute_force_house(spec: HouseSpec, prices_p: np.ndarray, dt_hours: float = 0.25):
    """Exact price-taking integer best response: argmin prices' y by start-tuple
    enumeration with an inner battery QP."""
    if len(spec.shiftables) > 2:
        raise OracleError("brute force limited to two shiftables")
    n = len(spec.background_p)
    prof = comp.house_inner(spec, np.zeros(n), np.asarray(prices_p, dtype=float), "integer", dt_hours)
    return prof

"""Dense numeric kernels used by every component subproblem.

Three primitives live here: a small convex QP solver (interior point with a
direct equality-only fast path), a per-time-step nonconvex line solver, and a
Euclidean projection onto the box-capped simplex.  All kernels are pure and
deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize


class KernelError(Exception):
    pass


class QpInfeasibleError(KernelError):
    """The feasible region of a QP is empty (certified by an LP phase 1)."""


class QpMaxIterError(KernelError):
    """Interior point iteration limit hit without a certificate."""


class LineSolveError(KernelError):
    """No multi-start point of the AC line step converged."""


@dataclass
class QuadIneq:
    """Convex quadratic inequality x'P x + p'x + c <= 0 with P PSD."""

    P: np.ndarray
    p: np.ndarray
    c: float

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.P @ x + self.p @ x + self.c)


@dataclass
class QpProblem:
    """min 1/2 x'H x + g'x  s.t.  A x = b,  C x <= d,  lb <= x <= ub.

    ``quad_ineqs`` optionally adds convex quadratic inequalities, handled by
    bisection on their multipliers outside the linear interior-point core.
    """

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    quad_ineqs: list[QuadIneq] = field(default_factory=list)


@dataclass
class QpResult:
    x: np.ndarray
    eq_mult: np.ndarray
    ineq_mult: np.ndarray  # multipliers for the stacked [C; I(ub); -I(lb)] rows
    quad_mult: np.ndarray
    status: str
    iterations: int


def _stack_inequalities(p: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    n = p.g.shape[0]
    rows = []
    rhs = []
    if p.C is not None and p.C.shape[0]:
        rows.append(np.asarray(p.C, dtype=float))
        rhs.append(np.asarray(p.d, dtype=float))
    eye = np.eye(n)
    if p.ub is not None:
        m = np.isfinite(p.ub)
        if m.any():
            rows.append(eye[m])
            rhs.append(np.asarray(p.ub, dtype=float)[m])
    if p.lb is not None:
        m = np.isfinite(p.lb)
        if m.any():
            rows.append(-eye[m])
            rhs.append(-np.asarray(p.lb, dtype=float)[m])
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _kkt_solve(H, g, A, b, reg=1e-11):
    """Solve the equality-constrained QP KKT system directly."""
    n = g.shape[0]
    me = 0 if A is None else A.shape[0]
    if me == 0:
        x = np.linalg.solve(H + reg * np.eye(n), -g)
        return x, np.zeros(0)
    K = np.zeros((n + me, n + me))
    K[:n, :n] = H + reg * np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    K[n:, n:] = -reg * np.eye(me)
    rhs = np.concatenate([-g, b])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def _certify_infeasible(A, b, C, d) -> bool:
    """Phase-1 LP: is {A x = b, C x <= d} empty?"""
    n = C.shape[1] if C is not None and C.size else (A.shape[1] if A is not None else 0)
    res = scipy.optimize.linprog(
        c=np.zeros(n),
        A_ub=C if C is not None and C.size else None,
        b_ub=d if C is not None and C.size else None,
        A_eq=A if A is not None and A.size else None,
        b_eq=b if A is not None and A.size else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    return res.status == 2


def _ipm(H, g, A, b, C, d, tol, max_iter=100):
    """Mehrotra predictor-corrector for a dense convex QP with m > 0 rows of
    linear inequalities.  Returns (x, y_eq, z_ineq, iters)."""
    n = g.shape[0]
    me = 0 if A is None else A.shape[0]
    m = C.shape[0]
    eye_n = np.eye(n)

    x, y = _kkt_solve(H + eye_n, g, A, b)
    s = np.maximum(d - C @ x, 1.0)
    z = np.ones(m)

    scale = 1.0 + max(np.abs(g).max(initial=0.0), np.abs(d).max(initial=0.0))
    for it in range(1, max_iter + 1):
        if not (np.isfinite(x).all() and np.isfinite(s).all() and np.isfinite(z).all()):
            break
        r_d = H @ x + g + C.T @ z + (A.T @ y if me else 0.0)
        r_p = (A @ x - b) if me else np.zeros(0)
        r_c = C @ x + s - d
        mu = z @ s / m
        if (
            np.abs(r_d).max(initial=0.0) <= tol * scale
            and np.abs(r_p).max(initial=0.0) <= tol * scale
            and np.abs(r_c).max(initial=0.0) <= tol * scale
            and mu <= tol * scale
        ):
            return x, y, z, it

        D = z / s
        M = H + C.T @ (D[:, None] * C) + 1e-11 * eye_n
        K = np.zeros((n + me, n + me))
        K[:n, :n] = M
        if me:
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = -1e-11 * np.eye(me)
        try:
            lu = scipy.linalg.lu_factor(K)
        except (scipy.linalg.LinAlgError, ValueError):
            break

        def solve_dir(rd, rp, rc, rsz):
            # eliminate (ds, dz): ds = -rc - C dx ; dz = (Z ds + rsz-part)...
            tmp = (rsz / s) - D * rc
            rhs = np.concatenate([-rd + C.T @ tmp, -rp])
            sol = scipy.linalg.lu_solve(lu, rhs)
            dx = sol[:n]
            dy = sol[n:]
            ds = -rc - C @ dx
            dz = -(rsz + z * ds) / s
            return dx, dy, ds, dz

        # affine scaling step
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                dx_a, dy_a, ds_a, dz_a = solve_dir(r_d, r_p, r_c, z * s)
                alpha_p = _max_step(s, ds_a)
                alpha_d = _max_step(z, dz_a)
                mu_aff = (z + alpha_d * dz_a) @ (s + alpha_p * ds_a) / m
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

                rsz = z * s + ds_a * dz_a - sigma * mu
                dx, dy, ds, dz = solve_dir(r_d, r_p, r_c, rsz)
        except ValueError:
            # iterates blew up (typically an empty feasible set); fall through
            # to the infeasibility certificate
            break
        alpha = 0.995 * min(_max_step(s, ds), _max_step(z, dz))
        x = x + alpha * dx
        if me:
            y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if mu < 1e-16 * scale:
            return x, y, z, it

    if _certify_infeasible(A, b, C, d):
        raise QpInfeasibleError("QP feasible region is empty")
    raise QpMaxIterError("interior point did not converge")


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    ratio = v[neg] / dv[neg]
    m = -float(ratio.max())
    return m if m < 1.0 else 1.0


def solve_qp(prob: QpProblem, warm: np.ndarray | None = None, tol: float = 1e-9) -> QpResult:
    """Solve a small dense convex QP to KKT residual <= tol (scaled).

    Tries the equality-only KKT system first; if that point already satisfies
    every inequality it is returned immediately.  Otherwise falls back to a
    Mehrotra interior point.  Convex quadratic inequalities are enforced by
    coordinate-wise bisection on their multipliers.
    """
    H = np.asarray(prob.H, dtype=float)
    g = np.asarray(prob.g, dtype=float)
    A = np.asarray(prob.A, dtype=float) if prob.A is not None and np.size(prob.A) else None
    b = np.asarray(prob.b, dtype=float) if A is not None else None
    C, d = _stack_inequalities(prob)

    if not prob.quad_ineqs:
        return _solve_linear_qp(H, g, A, b, C, d, tol)

    # Outer loop on quadratic-inequality multipliers gamma >= 0: the modified
    # QP objective gains gamma_k * (x'P_k x + p_k'x); complementarity is found
    # by bisection per constraint, swept until all are satisfied.
    nq = len(prob.quad_ineqs)
    gamma = np.zeros(nq)
    res = None
    for _ in range(60):
        Hk = H + sum(2.0 * gk * qi.P for gk, qi in zip(gamma, prob.quad_ineqs))
        gk_ = g + sum(gk * qi.p for gk, qi in zip(gamma, prob.quad_ineqs))
        res = _solve_linear_qp(Hk, gk_, A, b, C, d, tol)
        viol = np.array([qi.value(res.x) for qi in prob.quad_ineqs])
        worst = int(np.argmax(viol))
        if viol[worst] <= 1e-9:
            # drop multipliers whose constraints went slack
            slack = (viol < -1e-9) & (gamma > 0)
            if not slack.any():
                break
            gamma[slack] = 0.0
            continue
        gamma[worst] = _bisect_quad_mult(
            prob.quad_ineqs, worst, gamma, H, g, A, b, C, d, tol
        )
    res.quad_mult = gamma
    return res


def _bisect_quad_mult(quads, k, gamma, H, g, A, b, C, d, tol):
    def value_at(gk):
        gam = gamma.copy()
        gam[k] = gk
        Hk = H + sum(2.0 * gj * qj.P for gj, qj in zip(gam, quads))
        gk_ = g + sum(gj * qj.p for gj, qj in zip(gam, quads))
        r = _solve_linear_qp(Hk, gk_, A, b, C, d, tol)
        return quads[k].value(r.x)

    lo, hi = 0.0, max(1.0, 2.0 * gamma[k])
    while value_at(hi) > 0 and hi < 1e12:
        lo, hi = hi, hi * 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if value_at(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * (1.0 + hi):
            break
    return hi


def _solve_linear_qp(H, g, A, b, C, d, tol) -> QpResult:
    n = g.shape[0]
    if C.shape[0] == 0:
        x, y = _kkt_solve(H, g, A, b)
        return QpResult(x, y, np.zeros(0), np.zeros(0), "optimal", 0)

    x, y = _kkt_solve(H, g, A, b)
    if (C @ x <= d + 1e-11).all():
        return QpResult(x, y, np.zeros(C.shape[0]), np.zeros(0), "optimal", 0)

    x, y, z, it = _ipm(H, g, A, b, C, d, tol)
    return QpResult(x, y, z, np.zeros(0), "optimal", it)


# ---------------------------------------------------------------------------
# AC line per-step solver
# ---------------------------------------------------------------------------


def line_flows(g, b, v_i, v_j, delta):
    """Power into each line terminal from the branch admittance equations.

    delta = theta_i - theta_j.  Returns (p_i, q_i, p_j, q_j).
    """
    cs, sn = np.cos(delta), np.sin(delta)
    vij = v_i * v_j
    p_i = g * v_i**2 - g * vij * cs - b * vij * sn
    q_i = -b * v_i**2 + b * vij * cs - g * vij * sn
    p_j = g * v_j**2 - g * vij * cs + b * vij * sn
    q_j = -b * v_j**2 + b * vij * cs + g * vij * sn
    return p_i, q_i, p_j, q_j


@dataclass
class LineLimits:
    s_max: float
    v_lo: float
    v_hi: float
    theta_max: float


def _line_objective(z, g, b, lim, tgt, pen):
    """Batched objective/gradient.  z = (v_i, v_j, delta) x n stacked."""
    n = tgt.shape[1]
    v_i, v_j, delta = z[:n], z[n : 2 * n], z[2 * n :]
    tpi, tqi, tpj, tqj, tvi, tvj, tdelta = tgt
    cs, sn = np.cos(delta), np.sin(delta)
    vij = v_i * v_j
    p_i = g * v_i**2 - g * vij * cs - b * vij * sn
    q_i = -b * v_i**2 + b * vij * cs - g * vij * sn
    p_j = g * v_j**2 - g * vij * cs + b * vij * sn
    q_j = -b * v_j**2 + b * vij * cs + g * vij * sn

    e = np.array([p_i - tpi, q_i - tqi, p_j - tpj, q_j - tqj])
    f = (e**2).sum(axis=0) + (v_i - tvi) ** 2 + (v_j - tvj) ** 2 + 0.5 * (delta - tdelta) ** 2

    # apparent-power penalty at both ends
    ai = p_i**2 + q_i**2 - lim.s_max**2
    aj = p_j**2 + q_j**2 - lim.s_max**2
    vi_pos = np.maximum(ai, 0.0)
    vj_pos = np.maximum(aj, 0.0)
    f = f + pen * (vi_pos**2 + vj_pos**2)

    # partials of flows wrt (v_i, v_j, delta)
    d_pi = (2 * g * v_i - g * v_j * cs - b * v_j * sn,
            -g * v_i * cs - b * v_i * sn,
            g * vij * sn - b * vij * cs)
    d_qi = (-2 * b * v_i + b * v_j * cs - g * v_j * sn,
            b * v_i * cs - g * v_i * sn,
            -b * vij * sn - g * vij * cs)
    d_pj = (-g * v_j * cs + b * v_j * sn,
            2 * g * v_j - g * v_i * cs + b * v_i * sn,
            g * vij * sn + b * vij * cs)
    d_qj = (b * v_j * cs + g * v_j * sn,
            -2 * b * v_j + b * v_i * cs + g * v_i * sn,
            -b * vij * sn + g * vij * cs)

    w_pi = 2 * (p_i - tpi) + pen * 4 * vi_pos * p_i
    w_qi = 2 * (q_i - tqi) + pen * 4 * vi_pos * q_i
    w_pj = 2 * (p_j - tpj) + pen * 4 * vj_pos * p_j
    w_qj = 2 * (q_j - tqj) + pen * 4 * vj_pos * q_j

    g_vi = w_pi * d_pi[0] + w_qi * d_qi[0] + w_pj * d_pj[0] + w_qj * d_qj[0] + 2 * (v_i - tvi)
    g_vj = w_pi * d_pi[1] + w_qi * d_qi[1] + w_pj * d_pj[1] + w_qj * d_qj[1] + 2 * (v_j - tvj)
    g_dl = w_pi * d_pi[2] + w_qi * d_qi[2] + w_pj * d_pj[2] + w_qj * d_qj[2] + (delta - tdelta)

    return float(f.sum()), np.concatenate([g_vi, g_vj, g_dl])


def _lm_solve(z0, g, b, lim, tgt, pen, max_iter=80):
    """Batched projected Levenberg-Marquardt on the per-step 3-variable
    problems.  Steps are independent; each carries its own damping."""
    n = tgt.shape[1]
    lo = np.array([lim.v_lo, lim.v_lo, -lim.theta_max])
    hi = np.array([lim.v_hi, lim.v_hi, lim.theta_max])
    z = np.clip(z0.reshape(3, n).T.copy(), lo, hi)  # (n, 3)
    tpi, tqi, tpj, tqj, tvi, tvj, tdelta = tgt
    sq = np.sqrt(0.5)
    spen = np.sqrt(pen)

    def residuals(zz):
        v_i, v_j, delta = zz[:, 0], zz[:, 1], zz[:, 2]
        p_i, q_i, p_j, q_j = line_flows(g, b, v_i, v_j, delta)
        cs, sn = np.cos(delta), np.sin(delta)
        vij = v_i * v_j
        d_pi = np.stack([2 * g * v_i - g * v_j * cs - b * v_j * sn,
                         -g * v_i * cs - b * v_i * sn,
                         g * vij * sn - b * vij * cs], axis=1)
        d_qi = np.stack([-2 * b * v_i + b * v_j * cs - g * v_j * sn,
                         b * v_i * cs - g * v_i * sn,
                         -b * vij * sn - g * vij * cs], axis=1)
        d_pj = np.stack([-g * v_j * cs + b * v_j * sn,
                         2 * g * v_j - g * v_i * cs + b * v_i * sn,
                         g * vij * sn + b * vij * cs], axis=1)
        d_qj = np.stack([b * v_j * cs + g * v_j * sn,
                         -2 * b * v_j + b * v_i * cs + g * v_i * sn,
                         -b * vij * sn + g * vij * cs], axis=1)
        ai = np.maximum(p_i**2 + q_i**2 - lim.s_max**2, 0.0)
        aj = np.maximum(p_j**2 + q_j**2 - lim.s_max**2, 0.0)
        r = np.stack([
            p_i - tpi, q_i - tqi, p_j - tpj, q_j - tqj,
            zz[:, 0] - tvi, zz[:, 1] - tvj, sq * (zz[:, 2] - tdelta),
            spen * ai, spen * aj,
        ], axis=1)  # (n, 9)
        e3 = np.eye(3)
        J = np.stack([
            d_pi, d_qi, d_pj, d_qj,
            np.broadcast_to(e3[0], (n, 3)), np.broadcast_to(e3[1], (n, 3)),
            sq * np.broadcast_to(e3[2], (n, 3)),
            spen * 2 * (ai > 0)[:, None] * (p_i[:, None] * d_pi + q_i[:, None] * d_qi),
            spen * 2 * (aj > 0)[:, None] * (p_j[:, None] * d_pj + q_j[:, None] * d_qj),
        ], axis=1)  # (n, 9, 3)
        return r, J

    r, J = residuals(z)
    f = (r**2).sum(axis=1)
    mu = np.full(n, 1e-6)
    active = np.ones(n, dtype=bool)
    stall = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        grad = 2 * np.einsum("nij,ni->nj", J, r)
        # projected-gradient stationarity check; Gauss-Newton cannot push the
        # gradient below a floor set by the residual curvature it drops, so the
        # tolerance is modest and a stall counter catches steps at that floor
        pg = grad.copy()
        pg[(z <= lo + 1e-12) & (pg > 0)] = 0.0
        pg[(z >= hi - 1e-12) & (pg < 0)] = 0.0
        active = (np.abs(pg).max(axis=1) > 1e-9 * (1.0 + f)) & (stall < 5)
        if not active.any():
            break
        H = 2 * np.einsum("nij,nik->njk", J, J) + (mu[:, None, None] * np.eye(3))
        try:
            step = np.linalg.solve(H, -grad[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = -grad * 1e-3
        z_new = np.clip(z + np.where(active[:, None], step, 0.0), lo, hi)
        r_new, J_new = residuals(z_new)
        f_new = (r_new**2).sum(axis=1)
        improved = f_new <= f + 1e-16
        moved = f_new < f - 1e-15 * (1.0 + f)
        stall[active & ~moved] += 1
        stall[active & moved] = 0
        upd = active & improved
        z[upd] = z_new[upd]
        r[upd], J[upd] = r_new[upd], J_new[upd]
        f[upd] = f_new[upd]
        mu[upd] = np.maximum(mu[upd] * 0.3, 1e-9)
        worse = active & ~improved
        mu[worse] = np.minimum(mu[worse] * 10.0, 1e8)
    # a step counts as solved when stationary to tolerance or parked at the
    # Gauss-Newton gradient floor with a moderate gradient
    grad = 2 * np.einsum("nij,ni->nj", J, r)
    pg = grad.copy()
    pg[(z <= lo + 1e-12) & (pg > 0)] = 0.0
    pg[(z >= hi - 1e-12) & (pg < 0)] = 0.0
    converged = bool((np.abs(pg).max(axis=1) <= 1e-7 * (1.0 + f)).all())
    return z.T.reshape(-1), converged


def solve_line_steps_ac(
    g: float,
    b: float,
    lim: LineLimits,
    targets_i: np.ndarray,
    targets_j: np.ndarray,
    warm: np.ndarray | None = None,
    check_stall: bool = True,
):
    """Minimize the proximal objective of an AC line over all time steps.

    targets_i/targets_j are (4, n) arrays in (p, q, v, theta) row order.  The
    per-step problem is reduced to the 3 free variables (v_i, v_j, delta):
    power flows follow from the branch equations and the common angle offset
    has the closed form theta_m = (t_theta_i + t_theta_j) / 2.

    Returns (y_i, y_j, warm) where warm is the (3n,) stacked solution usable
    to warm start the next call.
    """
    n = targets_i.shape[1]
    tgt = np.array([
        targets_i[0], targets_i[1], targets_j[0], targets_j[1],
        targets_i[2], targets_j[2], targets_i[3] - targets_j[3],
    ])
    dmax = lim.theta_max
    bounds = (
        [(lim.v_lo, lim.v_hi)] * (2 * n) + [(-dmax, dmax)] * n
    )

    def run(z0, pen):
        z, ok = _lm_solve(z0, g, b, lim, tgt, pen)
        if ok:
            return z
        res = scipy.optimize.minimize(
            _line_objective, z, args=(g, b, lim, tgt, pen),
            method="L-BFGS-B", jac=True, bounds=bounds,
            options={"maxiter": 400, "ftol": 1e-16, "gtol": 1e-12},
        )
        return res.x

    v0 = np.clip(tgt[4], lim.v_lo, lim.v_hi)
    v1 = np.clip(tgt[5], lim.v_lo, lim.v_hi)
    starts = []
    if warm is not None:
        starts.append(np.asarray(warm, dtype=float).copy())
    else:
        for frac in (0.0, 0.5, -0.5, 1.0, -1.0):
            d0 = np.clip(tgt[6], -dmax, dmax) if frac == 0.0 else np.full(n, frac * dmax)
            starts.append(np.concatenate([v0, v1, d0]))

    pen = 1e3
    best_z, best_f = None, None
    for z0 in starts:
        z = run(z0, pen)
        f, _ = _line_objective(z, g, b, lim, tgt, pen)
        if best_f is None or f < best_f - 1e-14:
            best_f, best_z = f, z

    if warm is not None and check_stall:
        # stall check: a cold multi-start must not beat the warm solve
        d0 = np.clip(tgt[6], -dmax, dmax)
        z = run(np.concatenate([v0, v1, d0]), pen)
        f, _ = _line_objective(z, g, b, lim, tgt, pen)
        if f < best_f - 1e-10:
            best_f, best_z = f, z

    # escalate the apparent-power penalty until the limits hold
    for _ in range(6):
        v_i, v_j, delta = best_z[:n], best_z[n : 2 * n], best_z[2 * n :]
        p_i, q_i, p_j, q_j = line_flows(g, b, v_i, v_j, delta)
        viol = max(
            (p_i**2 + q_i**2 - lim.s_max**2).max(initial=0.0),
            (p_j**2 + q_j**2 - lim.s_max**2).max(initial=0.0),
        )
        if viol <= 1e-8:
            break
        pen *= 100.0
        best_z = run(best_z, pen)
    else:
        raise LineSolveError("AC line step: apparent-power limit not met after penalty escalation")

    v_i, v_j, delta = best_z[:n], best_z[n : 2 * n], best_z[2 * n :]
    p_i, q_i, p_j, q_j = line_flows(g, b, v_i, v_j, delta)
    theta_m = 0.5 * (targets_i[3] + targets_j[3])
    y_i = np.array([p_i, q_i, v_i, theta_m + 0.5 * delta])
    y_j = np.array([p_j, q_j, v_j, theta_m - 0.5 * delta])
    return y_i, y_j, best_z


def line_step_objective(g, b, lim, targets_i, targets_j, y_i, y_j):
    """Proximal objective value (sum over steps) of a candidate line point."""
    f = ((y_i - targets_i) ** 2).sum() + ((y_j - targets_j) ** 2).sum()
    return float(f)


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def project_simplex_box(target: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {u : sum u = total, 0 <= u <= 1}.

    Bisection on the shift multiplier tau, where u(tau) = clip(target - tau).
    """
    t = np.asarray(target, dtype=float)
    if not 0 <= total <= t.shape[0]:
        raise ValueError("total must lie in [0, dim]")
    lo = t.min() - 1.0 - total
    hi = t.max() + 1.0

    def mass(tau):
        return np.clip(t - tau, 0.0, 1.0).sum()

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) > total:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * (1.0 + abs(hi)):
            break
    tau = 0.5 * (lo + hi)
    u = np.clip(t - tau, 0.0, 1.0)
    # exact mass repair on the strictly interior entries
    interior = (u > 0.0) & (u < 1.0)
    k = interior.sum()
    if k:
        u[interior] += (total - u.sum()) / k
        u = np.clip(u, 0.0, 1.0)
    return u

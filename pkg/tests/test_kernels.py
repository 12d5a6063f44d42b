"""Kernel tests against independent slow oracles.

The QP solver is checked against projected gradient descent (box problems)
and cvxpy (equality/inequality/quadratic-inequality problems); the line step
against coarse-to-fine grid search; the capped-simplex projection against
cvxpy.  None of the oracles share code with the kernels.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopf import kernels


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def projected_gradient_box(H, g, lb, ub, iters=200_000, tol=1e-12):
    """Slow, independent solver for min 1/2 x'Hx + g'x s.t. lb <= x <= ub."""
    n = g.shape[0]
    step = 1.0 / np.linalg.eigvalsh(H).max()
    x = np.clip(np.zeros(n), lb, ub)
    for _ in range(iters):
        x_new = np.clip(x - step * (H @ x + g), lb, ub)
        if np.abs(x_new - x).max() < tol:
            return x_new
        x = x_new
    return x


def cvxpy_qp(H, g, A=None, b=None, C=None, d=None, lb=None, ub=None, quad=None):
    import cvxpy as cp

    n = g.shape[0]
    x = cp.Variable(n)
    cons = []
    if A is not None:
        cons.append(A @ x == b)
    if C is not None:
        cons.append(C @ x <= d)
    if lb is not None:
        cons.append(x >= lb)
    if ub is not None:
        cons.append(x <= ub)
    for qi in quad or []:
        cons.append(cp.quad_form(x, cp.psd_wrap(qi.P)) + qi.p @ x + qi.c <= 0)
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + g @ x), cons)
    prob.solve(solver="CLARABEL")
    assert prob.status == "optimal"
    return np.asarray(x.value), prob.value


def random_box_qp(rng, n):
    G = rng.standard_normal((n, n))
    H = G @ G.T + 0.5 * np.eye(n)
    g = rng.standard_normal(n)
    lb = -rng.uniform(0.1, 2.0, n)
    ub = rng.uniform(0.1, 2.0, n)
    return H, g, lb, ub


def grid_line_objective(g, b, lim, tgt, pen, npts=41):
    """Coarse-to-fine 3-D grid search on one time step's (v_i, v_j, delta)."""
    lo = np.array([lim.v_lo, lim.v_lo, -lim.theta_max])
    hi = np.array([lim.v_hi, lim.v_hi, lim.theta_max])
    best, width = None, hi - lo
    center = 0.5 * (lo + hi)
    for _ in range(4):
        axes = [np.linspace(max(lo[k], center[k] - width[k] / 2),
                            min(hi[k], center[k] + width[k] / 2), npts)
                for k in range(3)]
        Vi, Vj, D = np.meshgrid(*axes, indexing="ij")
        z = np.stack([Vi.ravel(), Vj.ravel(), D.ravel()])
        vals = _point_objectives(z, g, b, lim, tgt, pen)
        k = int(np.argmin(vals))
        center = z[:, k]
        if best is None or vals[k] < best:
            best = float(vals[k])
        width = width * (2.5 / npts)
    return best


def _point_objectives(z, g, b, lim, tgt, pen):
    v_i, v_j, delta = z
    p_i, q_i, p_j, q_j = kernels.line_flows(g, b, v_i, v_j, delta)
    tpi, tqi, tpj, tqj, tvi, tvj, tdelta = tgt
    f = ((p_i - tpi) ** 2 + (q_i - tqi) ** 2 + (p_j - tpj) ** 2 + (q_j - tqj) ** 2
         + (v_i - tvi) ** 2 + (v_j - tvj) ** 2 + 0.5 * (delta - tdelta) ** 2)
    f = f + pen * (np.maximum(p_i**2 + q_i**2 - lim.s_max**2, 0.0) ** 2
                   + np.maximum(p_j**2 + q_j**2 - lim.s_max**2, 0.0) ** 2)
    return f


def random_line_case(rng, scale=0.3):
    g = rng.uniform(0.5, 5.0)
    b = -rng.uniform(4.0, 14.0)
    lim = kernels.LineLimits(
        s_max=rng.uniform(0.3, 1.5), v_lo=0.9, v_hi=1.1,
        theta_max=rng.uniform(0.2, 0.5),
    )
    tgt = np.array([
        scale * rng.standard_normal(1),
        scale * rng.standard_normal(1),
        scale * rng.standard_normal(1),
        scale * rng.standard_normal(1),
        1.0 + 0.05 * rng.standard_normal(1),
        1.0 + 0.05 * rng.standard_normal(1),
        0.1 * rng.standard_normal(1),
    ]).reshape(7, 1)
    return g, b, lim, tgt


# ---------------------------------------------------------------------------
# QP solver
# ---------------------------------------------------------------------------


def test_qp_matches_projected_gradient_on_box_problems():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n = int(rng.integers(2, 9))
        H, g, lb, ub = random_box_qp(rng, n)
        res = kernels.solve_qp(kernels.QpProblem(H, g, lb=lb, ub=ub))
        x_ref = projected_gradient_box(H, g, lb, ub)
        assert np.abs(res.x - x_ref).max() < 1e-6


def test_qp_equality_only_matches_dense_kkt():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(3, 10))
        me = int(rng.integers(1, n))
        G = rng.standard_normal((n, n))
        H = G @ G.T + np.eye(n)
        g = rng.standard_normal(n)
        A = rng.standard_normal((me, n))
        b = rng.standard_normal(me)
        res = kernels.solve_qp(kernels.QpProblem(H, g, A=A, b=b))
        K = np.block([[H, A.T], [A, np.zeros((me, me))]])
        ref = np.linalg.solve(K, np.concatenate([-g, b]))
        assert np.abs(res.x - ref[:n]).max() < 1e-7
        assert np.abs(A @ res.x - b).max() < 1e-8


def test_qp_with_linear_inequalities_matches_cvxpy():
    rng = np.random.default_rng(2)
    for _ in range(15):
        n = int(rng.integers(2, 8))
        H, g, lb, ub = random_box_qp(rng, n)
        C = rng.standard_normal((3, n))
        d = rng.uniform(0.2, 1.0, 3)
        res = kernels.solve_qp(kernels.QpProblem(H, g, C=C, d=d, lb=lb, ub=ub))
        x_ref, f_ref = cvxpy_qp(H, g, C=C, d=d, lb=lb, ub=ub)
        f = 0.5 * res.x @ H @ res.x + g @ res.x
        assert f <= f_ref + 1e-6
        assert (C @ res.x <= d + 1e-8).all()
        assert (res.x >= lb - 1e-8).all() and (res.x <= ub + 1e-8).all()


def test_qp_quadratic_inequality_disk():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = 4
        H, g, _, _ = random_box_qp(rng, n)
        r = rng.uniform(0.1, 0.5)
        quad = [kernels.QuadIneq(np.eye(n), np.zeros(n), -r**2)]
        res = kernels.solve_qp(kernels.QpProblem(H, g, quad_ineqs=quad))
        x_ref, f_ref = cvxpy_qp(H, g, quad=quad)
        assert res.x @ res.x <= r**2 + 1e-7
        f = 0.5 * res.x @ H @ res.x + g @ res.x
        assert f <= f_ref + 1e-6


def test_qp_infeasible_is_certified():
    H = np.eye(2)
    g = np.zeros(2)
    C = np.array([[1.0, 0.0], [-1.0, 0.0]])
    d = np.array([-1.0, -1.0])  # x0 <= -1 and x0 >= 1
    with pytest.raises(kernels.QpInfeasibleError):
        kernels.solve_qp(kernels.QpProblem(H, g, C=C, d=d))


def test_qp_active_bound_multipliers_sign():
    # minimize (x-2)^2/2 with x <= 1: active upper bound, positive multiplier
    res = kernels.solve_qp(
        kernels.QpProblem(np.eye(1), np.array([-2.0]), ub=np.array([1.0]))
    )
    assert abs(res.x[0] - 1.0) < 1e-8
    assert res.ineq_mult[0] > 0.9


# ---------------------------------------------------------------------------
# AC line step
# ---------------------------------------------------------------------------


def test_line_flows_loss_is_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(100):
        g = rng.uniform(0.0, 5.0)
        b = -rng.uniform(1.0, 14.0)
        v_i, v_j = rng.uniform(0.9, 1.1, 2)
        delta = rng.uniform(-0.5, 0.5)
        p_i, q_i, p_j, q_j = kernels.line_flows(g, b, v_i, v_j, delta)
        assert p_i + p_j >= -1e-12  # resistive loss


def test_line_flows_zero_at_identical_voltages():
    p_i, q_i, p_j, q_j = kernels.line_flows(3.0, -9.0, 1.0, 1.0, 0.0)
    assert abs(p_i) < 1e-15 and abs(q_i) < 1e-15
    assert abs(p_j) < 1e-15 and abs(q_j) < 1e-15


def test_line_step_matches_refined_grid_search():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g, b, lim, tgt = random_line_case(rng)
        ti = np.array([tgt[0], tgt[1], tgt[4], tgt[6] / 2])
        tj = np.array([tgt[2], tgt[3], tgt[5], -tgt[6] / 2])
        y_i, y_j, z = kernels.solve_line_steps_ac(g, b, lim, ti, tj)
        f = kernels._line_objective(z, g, b, lim, tgt, 1e3)[0]
        f_grid = grid_line_objective(g, b, lim, tgt[:, 0], 1e3)
        assert f <= f_grid + 1e-4


def test_line_step_flow_equations_exact():
    rng = np.random.default_rng(6)
    g, b, lim, _ = random_line_case(rng)
    n = 6
    ti = 0.2 * rng.standard_normal((4, n))
    tj = 0.2 * rng.standard_normal((4, n))
    ti[2] += 1.0
    tj[2] += 1.0
    y_i, y_j, _ = kernels.solve_line_steps_ac(g, b, lim, ti, tj)
    delta = y_i[3] - y_j[3]
    p_i, q_i, p_j, q_j = kernels.line_flows(g, b, y_i[2], y_j[2], delta)
    assert np.abs(y_i[0] - p_i).max() < 1e-12
    assert np.abs(y_i[1] - q_i).max() < 1e-12
    assert np.abs(y_j[0] - p_j).max() < 1e-12
    assert np.abs(y_j[1] - q_j).max() < 1e-12


def test_line_step_respects_apparent_power_limit():
    rng = np.random.default_rng(7)
    lim = kernels.LineLimits(s_max=0.2, v_lo=0.9, v_hi=1.1, theta_max=0.5)
    n = 4
    ti = np.array([np.full(n, 0.8), np.zeros(n), np.ones(n), np.zeros(n)])
    tj = np.array([np.full(n, -0.7), np.zeros(n), np.ones(n), np.zeros(n)])
    y_i, y_j, _ = kernels.solve_line_steps_ac(2.0, -8.0, lim, ti, tj)
    assert ((y_i[0] ** 2 + y_i[1] ** 2) <= lim.s_max**2 + 1e-7).all()
    assert ((y_j[0] ** 2 + y_j[1] ** 2) <= lim.s_max**2 + 1e-7).all()


def test_line_step_warm_start_is_consistent():
    rng = np.random.default_rng(8)
    g, b, lim, _ = random_line_case(rng)
    n = 5
    ti = 0.1 * rng.standard_normal((4, n))
    tj = 0.1 * rng.standard_normal((4, n))
    ti[2] += 1.0
    tj[2] += 1.0
    y_i, y_j, warm = kernels.solve_line_steps_ac(g, b, lim, ti, tj)
    y_i2, y_j2, _ = kernels.solve_line_steps_ac(g, b, lim, ti, tj, warm=warm)
    assert np.abs(y_i2 - y_i).max() < 1e-8
    assert np.abs(y_j2 - y_j).max() < 1e-8


# ---------------------------------------------------------------------------
# Capped-simplex projection
# ---------------------------------------------------------------------------


def cvxpy_simplex_projection(t, total):
    import cvxpy as cp

    u = cp.Variable(t.shape[0])
    prob = cp.Problem(
        cp.Minimize(cp.sum_squares(u - t)),
        [cp.sum(u) == total, u >= 0, u <= 1],
    )
    prob.solve(solver="CLARABEL")
    return np.asarray(u.value)


def test_simplex_projection_matches_cvxpy():
    rng = np.random.default_rng(9)
    for _ in range(25):
        dim = int(rng.integers(1, 12))
        t = rng.standard_normal(dim) * 2.0
        total = float(rng.uniform(0, dim))
        u = kernels.project_simplex_box(t, total)
        u_ref = cvxpy_simplex_projection(t, total)
        assert np.abs(u - u_ref).max() < 1e-6


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=10),
    st.floats(0, 1, allow_nan=False),
)
def test_simplex_projection_feasibility(vals, frac):
    t = np.array(vals)
    total = frac * t.shape[0]
    u = kernels.project_simplex_box(t, total)
    assert (u >= -1e-12).all() and (u <= 1 + 1e-12).all()
    assert abs(u.sum() - total) < 1e-9


def test_simplex_projection_idempotent():
    rng = np.random.default_rng(10)
    for _ in range(10):
        t = rng.standard_normal(6)
        u = kernels.project_simplex_box(t, 1.0)
        u2 = kernels.project_simplex_box(u, 1.0)
        assert np.abs(u - u2).max() < 1e-9


def test_simplex_projection_rejects_bad_total():
    with pytest.raises(ValueError):
        kernels.project_simplex_box(np.zeros(3), 4.0)

"""Discrete household decisions on top of a relaxed negotiation.

Stage one runs the relaxed consensus solve; its converged point supplies each
house with negotiated terminal values y_hat and prices lam_hat, and its
objective is a lower bound on every integer-feasible outcome.  Stage two
resolves the start-time indicators by one of:

* RP (reprice): each house with a fractional indicator re-decides locally by
  minimizing a deviation-penalized cost function (f0 or f3), after which the
  network is re-dispatched with house profiles frozen.
* RD (round and re-run): every indicator is frozen at its largest value
  (earliest start on ties) and the consensus solve restarts warm.
* UR (unrelaxed): house subproblems run in integer mode inside every
  iteration; no convergence guarantee.

Cost functions, with deviations taken on the (p, q) rows only:

    f0(y) = lam_hat' y      + alpha * ||y - y_hat||^2
    f3(y) = lam_hat' y_hat  + alpha * (y - y_hat)' diag(|lam_hat|) (y - y_hat)

Charges are the cost-function value for RP and lam' y for RD/UR; all figures
are dollars over the horizon.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import components as comp
from .admm import AdmmConfig, AdmmEngine, AdmmState, Solution
from .network import (
    P,
    Q,
    FixedInjectionSpec,
    HouseSpec,
    Network,
)

FRACTIONAL_TOL = 1e-6


class TwoStageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Negotiation (stage one)
# ---------------------------------------------------------------------------


@dataclass
class NegotiatedPoint:
    state: AdmmState
    solution: Solution
    objective: float  # relaxed lower bound, dollars
    y_hat: dict  # house component -> (4, n) negotiated device-side values
    lam_hat: dict  # house component -> (4, n) connection duals
    profiles: dict  # house component -> HouseProfiles


def house_components(net: Network) -> list[int]:
    return [i for i, c in enumerate(net.components) if isinstance(c, HouseSpec)]


def negotiate(net: Network, config: AdmmConfig | None = None) -> NegotiatedPoint:
    cfg = dataclasses.replace(config or AdmmConfig(), house_mode="relaxed")
    engine = AdmmEngine(net, cfg)
    state, sol, converged = engine.run()
    if not converged:
        raise TwoStageError("negotiation did not converge within the iteration limit")
    y_hat, lam_hat = {}, {}
    for c in house_components(net):
        term = net.terminal_of[c][0]
        l = engine.conn_of_dev_term[term]
        y_hat[c] = state.y[term].copy()
        lam_hat[c] = state.lam[l].copy()
    return NegotiatedPoint(state, sol, sol.objective, y_hat, lam_hat, dict(sol.profiles))


# ---------------------------------------------------------------------------
# RP local decisions
# ---------------------------------------------------------------------------


@dataclass
class HouseOutcome:
    starts: list  # chosen start step per shiftable
    u: list  # full-horizon indicator vectors
    y: np.ndarray  # realized (4, n) device-side terminal values
    charge: float  # dollars


@dataclass
class StageTwoReport:
    method: str  # "RP-f0", "RP-f3", "RD", "UR"
    alpha: float | None
    relaxed_objective: float
    restored_cost: float
    converged: bool
    cost_delta: float  # (restored - relaxed) / |relaxed|
    relaxed_charges: float
    total_charges: float
    charge_delta: float
    houses: dict  # component index -> HouseOutcome


def _pq_dot(lam: np.ndarray, y: np.ndarray) -> float:
    return float(lam[P] @ y[P] + lam[Q] @ y[Q])


def _rp_weights(cost_fn: str, alpha: float, y_hat: np.ndarray, lam_hat: np.ndarray):
    """Map a cost function onto the house's quadratic objective
    sum_t w_t p_t^2 + c_t p_t (dropping p-independent constants)."""
    if cost_fn == "f0":
        w = np.full(y_hat.shape[1], alpha)
        c = lam_hat[P] - 2.0 * alpha * y_hat[P]
    elif cost_fn == "f3":
        w = alpha * np.abs(lam_hat[P])
        c = -2.0 * alpha * np.abs(lam_hat[P]) * y_hat[P]
    else:
        raise TwoStageError(f"unknown cost function {cost_fn!r}")
    return w, c


def rp_charge(
    cost_fn: str, alpha: float, y: np.ndarray, y_hat: np.ndarray, lam_hat: np.ndarray
) -> float:
    dev_p = y[P] - y_hat[P]
    dev_q = y[Q] - y_hat[Q]
    if cost_fn == "f0":
        return _pq_dot(lam_hat, y) + alpha * float(dev_p @ dev_p + dev_q @ dev_q)
    if cost_fn == "f3":
        pen = float(np.abs(lam_hat[P]) @ dev_p**2 + np.abs(lam_hat[Q]) @ dev_q**2)
        return _pq_dot(lam_hat, y_hat) + alpha * pen
    raise TwoStageError(f"unknown cost function {cost_fn!r}")


def rp_local_decide(
    spec: HouseSpec,
    y_hat: np.ndarray,
    lam_hat: np.ndarray,
    cost_fn: str,
    alpha: float,
    dt_hours: float,
) -> HouseOutcome:
    """One house's integer re-decision against negotiated values and prices."""
    if alpha < 0:
        raise TwoStageError("alpha must be nonnegative")
    w, c = _rp_weights(cost_fn, alpha, y_hat, lam_hat)
    prof = comp.house_inner(spec, w, c, mode="integer", dt_hours=dt_hours)
    y = y_hat.copy()
    y[P] = prof.p_total
    y[Q] = prof.q_total
    starts = [int(np.argmax(u)) if u.size else 0 for u in prof.u]
    return HouseOutcome(
        starts, prof.u, y, rp_charge(cost_fn, alpha, y, y_hat, lam_hat)
    )


def _is_fractional(profiles) -> bool:
    return any(
        np.abs(u - np.round(u)).max(initial=0.0) > FRACTIONAL_TOL for u in profiles.u
    )


def rp_run(
    net: Network,
    cost_fn: str = "f0",
    alpha: float = 10.0,
    config: AdmmConfig | None = None,
    negotiated: NegotiatedPoint | None = None,
    decide_net: Network | None = None,
) -> StageTwoReport:
    """Full RP pipeline: negotiate, locally re-decide fractional houses,
    restore feasibility with house profiles frozen.

    ``decide_net`` lets stage two run against perturbed house data (e.g.
    changed solar) while keeping stage one's negotiated point.
    """
    neg = negotiated or negotiate(net, config)
    stage2 = decide_net or net
    outcomes = {}
    for c in house_components(stage2):
        spec = stage2.components[c]
        prof = neg.profiles[c]
        perturbed = stage2 is not net
        if _is_fractional(prof) or perturbed:
            outcomes[c] = rp_local_decide(
                spec, neg.y_hat[c], neg.lam_hat[c], cost_fn, alpha, stage2.dt_hours
            )
        else:
            y = neg.y_hat[c].copy()
            outcomes[c] = HouseOutcome(
                [int(np.argmax(u)) if u.size else 0 for u in prof.u],
                list(prof.u),
                y,
                rp_charge(cost_fn, alpha, y, neg.y_hat[c], neg.lam_hat[c]),
            )
    cost, converged, _ = restore_feasibility(
        stage2, {c: o.y for c, o in outcomes.items()}, config, warm=neg.state
    )
    return _make_report(f"RP-{cost_fn}", alpha, neg, cost, converged, outcomes)


# ---------------------------------------------------------------------------
# RD / UR
# ---------------------------------------------------------------------------


def _freeze_starts(spec: HouseSpec, prof) -> HouseSpec:
    frozen = []
    for sh, u in zip(spec.shiftables, prof.u):
        window = list(sh.window)
        vals = u[window]
        # argmax with earliest start winning exact ties
        best = int(np.argmax(vals))
        frozen.append(dataclasses.replace(sh, fixed_start=window[best]))
    return dataclasses.replace(spec, shiftables=tuple(frozen))


def rd_fix_and_rerun(
    net: Network,
    config: AdmmConfig | None = None,
    negotiated: NegotiatedPoint | None = None,
) -> StageTwoReport:
    neg = negotiated or negotiate(net, config)
    specs = list(net.components)
    for c in house_components(net):
        specs[c] = _freeze_starts(specs[c], neg.profiles[c])
    fixed_net = dataclasses.replace(net, components=tuple(specs))
    engine = AdmmEngine(fixed_net, dataclasses.replace(config or AdmmConfig(), house_mode="relaxed"))
    state, sol, converged = engine.run(init="warm", warm=neg.state)
    outcomes = _charged_outcomes(fixed_net, engine, state, sol)
    return _make_report("RD", None, neg, sol.objective, converged, outcomes)


def ur_run(
    net: Network,
    config: AdmmConfig | None = None,
    negotiated: NegotiatedPoint | None = None,
) -> StageTwoReport:
    """Integer house subproblems inside every iteration; if the run fails to
    settle, the last iterate's house profiles are frozen and re-dispatched."""
    neg = negotiated or negotiate(net, config)
    engine = AdmmEngine(net, dataclasses.replace(config or AdmmConfig(), house_mode="integer"))
    state, sol, converged = engine.run()
    if converged:
        outcomes = _charged_outcomes(net, engine, state, sol)
        return _make_report("UR", None, neg, sol.objective, converged, outcomes)
    # fall back: freeze the last integer profiles and restore
    outcomes = _charged_outcomes(net, engine, state, sol)
    cost, restored_ok, _ = restore_feasibility(
        net, {c: o.y for c, o in outcomes.items()}, config, warm=state
    )
    return _make_report("UR", None, neg, cost, restored_ok and converged, outcomes)


def _charged_outcomes(net, engine, state, sol):
    outcomes = {}
    for c in house_components(net):
        term = net.terminal_of[c][0]
        l = engine.conn_of_dev_term[term]
        y = state.y[term].copy()
        prof = sol.profiles.get(c)
        u = list(prof.u) if prof is not None else []
        starts = [int(np.argmax(uu)) if uu.size else 0 for uu in u]
        outcomes[c] = HouseOutcome(starts, u, y, _pq_dot(state.lam[l], y))
    return outcomes


# ---------------------------------------------------------------------------
# Restoration
# ---------------------------------------------------------------------------


def restore_feasibility(
    net: Network,
    house_y: dict,
    config: AdmmConfig | None = None,
    warm: AdmmState | None = None,
):
    """Re-dispatch with every house replaced by its fixed (p, q) profile;
    generators and lines absorb the mismatch.  Returns
    (generation cost, converged, Solution)."""
    specs = list(net.components)
    for c, y in house_y.items():
        if not isinstance(net.components[c], HouseSpec):
            raise TwoStageError(f"component {c} is not a house")
        specs[c] = FixedInjectionSpec(p=y[P].copy(), q=y[Q].copy())
    fixed_net = dataclasses.replace(net, components=tuple(specs))
    engine = AdmmEngine(fixed_net, dataclasses.replace(config or AdmmConfig(), house_mode="relaxed"))
    if warm is not None:
        state, sol, converged = engine.run(init="warm", warm=warm)
    else:
        state, sol, converged = engine.run()
    for c in house_y:
        term = fixed_net.terminal_of[c][0]
        if not np.array_equal(state.y[term][P], house_y[c][P]):
            raise TwoStageError("restoration altered a frozen house profile")
    return sol.objective, converged, sol


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def _make_report(method, alpha, neg, restored_cost, converged, outcomes) -> StageTwoReport:
    relaxed_charges = sum(
        _pq_dot(neg.lam_hat[c], neg.y_hat[c]) for c in neg.y_hat
    )
    total = sum(o.charge for o in outcomes.values())
    denom_cost = max(abs(neg.objective), 1e-12)
    denom_charge = max(abs(relaxed_charges), 1e-12)
    return StageTwoReport(
        method=method,
        alpha=alpha,
        relaxed_objective=neg.objective,
        restored_cost=restored_cost,
        converged=converged,
        cost_delta=(restored_cost - neg.objective) / denom_cost,
        relaxed_charges=relaxed_charges,
        total_charges=total,
        charge_delta=(total - relaxed_charges) / denom_charge,
        houses=outcomes,
    )


def report_to_dict(report: StageTwoReport) -> dict:
    return {
        "method": report.method,
        "alpha": report.alpha,
        "relaxed_objective": report.relaxed_objective,
        "restored_cost": report.restored_cost,
        "converged": report.converged,
        "cost_delta_pct": 100.0 * report.cost_delta,
        "charge_delta_pct": 100.0 * report.charge_delta,
        "relaxed_charges": report.relaxed_charges,
        "total_charges": report.total_charges,
        "houses": {
            str(c): {
                "starts": [int(s) for s in o.starts],
                "charge": o.charge,
                "p_pu": o.y[P].tolist(),
                "q_pu": o.y[Q].tolist(),
            }
            for c, o in report.houses.items()
        },
    }


def write_report_json(report: StageTwoReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1)


def write_summary_csv(reports: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "cost_delta_pct", "charge_delta_pct"])
        for r in reports:
            wr.writerow([r.method, 100.0 * r.cost_delta, 100.0 * r.charge_delta])

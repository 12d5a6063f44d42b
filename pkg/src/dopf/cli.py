"""Command-line experiment driver.

Subcommands mirror the study workflows: ``gen`` emits a seeded instance,
``solve`` runs the distributed solver and writes solution/residual/summary
artifacts, ``two-stage`` applies one of the discrete-decision mechanisms, and
``uncertainty`` reprices after a solar perturbation.  Every command is
reproducible from its manifest; exit codes are 0 success, 2 validation error,
3 non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import netio
from . import network as nw
from . import scenario as sc
from . import two_stage as ts
from .admm import AdmmConfig, AdmmEngine, AdmmState, write_residual_csv
from .components import ComponentError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}", EXIT_IO) from exc


def _write_json(doc, path):
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _load_instance(path: str, model_override: str | None = None) -> nw.Network:
    try:
        net = netio.load_network(path)
    except netio.NetIoError as exc:
        code = EXIT_IO if "cannot read" in str(exc) else EXIT_VALIDATION
        raise CliError(str(exc), code) from exc
    if model_override:
        comps = tuple(
            dataclasses.replace(c, model=model_override) if isinstance(c, nw.LineSpec) else c
            for c in net.components
        )
        try:
            net = dataclasses.replace(net, components=comps)
        except nw.NetworkError as exc:
            raise CliError(str(exc), EXIT_VALIDATION) from exc
    return net


def _admm_config(args) -> AdmmConfig:
    return AdmmConfig(
        rho=args.rho, eps=args.eps, max_iter=args.max_iter,
        workers=getattr(args, "workers", 0),
    )


def _solution_doc(net: nw.Network, sol, cfg: AdmmConfig) -> dict:
    return {
        "objective_dollars": sol.objective,
        "converged": bool(sol.converged),
        "iterations": sol.iterations,
        "parallel_seconds": sol.parallel_time,
        "wall_seconds": sol.wall_time,
        "rho": cfg.rho,
        "eps": cfg.eps,
        "y": sol.y.tolist(),
        "duals": sol.duals.tolist(),
    }


def _summary_doc(net: nw.Network, sol, cfg: AdmmConfig) -> dict:
    last = sol.records[-1] if sol.records else None
    return {
        "objective_dollars": sol.objective,
        "converged": bool(sol.converged),
        "iterations": sol.iterations,
        "parallel_seconds": sol.parallel_time,
        "sequential_seconds": sol.wall_time,
        "r_p": None if last is None else last.r_p,
        "r_d": None if last is None else last.r_d,
        "rho": cfg.rho,
        "eps": cfg.eps,
        "horizon": net.horizon,
        "step_minutes": net.step_minutes,
    }


def _warm_state(path: str, net: nw.Network, cfg: AdmmConfig) -> AdmmState:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read warm-start file {path}: {exc}", EXIT_IO) from exc
    y = np.asarray(doc["y"], dtype=float)
    lam = np.asarray(doc["duals"], dtype=float)
    return AdmmState(y, lam, 0, cfg.rho)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = sc.InstanceConfig(
        seed=args.seed, n=args.n, step_minutes=args.step_minutes,
        buses=args.buses, houses=args.houses, generators=args.generators,
        line_model=args.model, pv_fraction=args.pv, battery_fraction=args.battery,
        shiftables_per_house=args.shiftables, sigma_scale=args.sigma_scale,
        load_shape=args.load_shape,
    )
    try:
        net = sc.gen_instance(cfg)
    except (sc.ScenarioError, nw.NetworkError, netio.NetIoError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    _ensure_dir(args.out)
    try:
        netio.save_network(net, os.path.join(args.out, "network.json"))
        load = sc.gen_load_profile(cfg.n, cfg.daily_kwh, shape=cfg.load_shape)
        np.savetxt(
            os.path.join(args.out, "load_profile.csv"),
            np.column_stack([np.arange(cfg.n), load]),
            delimiter=",", header="t,kw", comments="",
        )
    except OSError as exc:
        raise CliError(f"cannot write instance files: {exc}", EXIT_IO) from exc
    _write_json(sc.manifest(cfg, net), os.path.join(args.out, "manifest.json"))
    print(f"instance written to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    net = _load_instance(args.instance, args.model)
    cfg = _admm_config(args)
    try:
        pu = nw.to_per_unit(net)
        engine = AdmmEngine(pu, cfg)
        if args.warm_from:
            state, sol, converged = engine.run(
                init="warm", warm=_warm_state(args.warm_from, pu, cfg)
            )
        else:
            state, sol, converged = engine.run()
    except (nw.NetworkError, ComponentError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    _ensure_dir(args.out)
    _write_json(_solution_doc(pu, sol, cfg), os.path.join(args.out, "solution.json"))
    _write_json(_summary_doc(pu, sol, cfg), os.path.join(args.out, "summary.json"))
    try:
        write_residual_csv(sol.records, os.path.join(args.out, "residuals.csv"))
    except OSError as exc:
        raise CliError(f"cannot write residuals: {exc}", EXIT_IO) from exc
    print(
        f"converged={converged} iterations={sol.iterations} "
        f"objective=${sol.objective:.4f} parallel={sol.parallel_time:.3f}s"
    )
    if not converged:
        raise CliError("solver did not converge within the iteration limit", EXIT_NO_CONVERGENCE)
    return EXIT_OK


_METHODS = {
    "rp-f0": lambda net, cfg, alpha: ts.rp_run(net, "f0", alpha, cfg),
    "rp-f3": lambda net, cfg, alpha: ts.rp_run(net, "f3", alpha, cfg),
    "rd": lambda net, cfg, alpha: ts.rd_fix_and_rerun(net, cfg),
    "ur": lambda net, cfg, alpha: ts.ur_run(net, cfg),
}


def cmd_two_stage(args) -> int:
    net = _load_instance(args.instance, args.model)
    cfg = _admm_config(args)
    try:
        pu = nw.to_per_unit(net)
        report = _METHODS[args.method](pu, cfg, args.alpha)
    except ts.TwoStageError as exc:
        raise CliError(str(exc), EXIT_NO_CONVERGENCE) from exc
    except (nw.NetworkError, ComponentError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    _ensure_dir(args.out)
    ts.write_report_json(report, os.path.join(args.out, "report.json"))
    try:
        ts.write_summary_csv([report], os.path.join(args.out, "summary.csv"))
    except OSError as exc:
        raise CliError(f"cannot write summary: {exc}", EXIT_IO) from exc
    print(
        f"method={report.method} cost_delta={100 * report.cost_delta:+.3f}% "
        f"charge_delta={100 * report.charge_delta:+.3f}% converged={report.converged}"
    )
    if not report.converged:
        raise CliError("stage-two run did not converge", EXIT_NO_CONVERGENCE)
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    net = _load_instance(args.instance, None)
    cfg = _admm_config(args)
    factor = 1.0 - args.pct / 100.0 if args.direction == "lower" else 1.0 + args.pct / 100.0
    try:
        pu = nw.to_per_unit(net)
        neg = ts.negotiate(pu, cfg)
        perturbed = sc.perturb_solar(pu, factor)
        report = ts.rp_run(
            pu, args.cost_fn, args.alpha, cfg, negotiated=neg, decide_net=perturbed
        )
    except ts.TwoStageError as exc:
        raise CliError(str(exc), EXIT_NO_CONVERGENCE) from exc
    except (nw.NetworkError, sc.ScenarioError, ComponentError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    _ensure_dir(args.out)
    doc = ts.report_to_dict(report)
    doc["direction"] = args.direction
    doc["pct"] = args.pct
    doc["solar_factor"] = factor
    _write_json(doc, os.path.join(args.out, "report.json"))
    print(
        f"direction={args.direction} cost_delta={100 * report.cost_delta:+.3f}% "
        f"converged={report.converged}"
    )
    if not report.converged:
        raise CliError("restoration did not converge", EXIT_NO_CONVERGENCE)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--rho", type=float, default=0.5, help="consensus penalty weight")
    p.add_argument("--eps", type=float, default=1e-4, help="stopping tolerance")
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--workers", type=int, default=0,
                   help="device-solve threads; 0 reads DOPF_WORKERS, default 1")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dopf",
        description="Distributed dynamic optimal power flow solver and experiment driver",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded random instance")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="instance")
    g.add_argument("--buses", type=int, default=10)
    g.add_argument("--houses", type=int, default=None)
    g.add_argument("--generators", type=int, default=2)
    g.add_argument("--n", type=int, default=96)
    g.add_argument("--step-minutes", type=float, default=15.0)
    g.add_argument("--model", choices=["ac", "dc"], default="ac")
    g.add_argument("--pv", type=float, default=0.5, help="PV penetration fraction")
    g.add_argument("--battery", type=float, default=0.5)
    g.add_argument("--shiftables", type=int, default=2)
    g.add_argument("--sigma-scale", type=float, default=1.0)
    g.add_argument("--load-shape", default="double_peak")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run the distributed solver")
    s.add_argument("--instance", required=True, help="network JSON file")
    s.add_argument("--model", choices=["ac", "dc"], default=None,
                   help="override the line model of every line")
    s.add_argument("--warm-from", default=None, help="solution.json of a prior run")
    s.add_argument("--out", default="run")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("two-stage", help="discrete-decision mechanisms")
    t.add_argument("--instance", required=True)
    t.add_argument("--method", choices=sorted(_METHODS), required=True)
    t.add_argument("--alpha", type=float, default=10.0)
    t.add_argument("--model", choices=["ac", "dc"], default=None)
    t.add_argument("--out", default="run")
    _add_solver_flags(t)
    t.set_defaults(func=cmd_two_stage)

    u = sub.add_parser("uncertainty", help="solar perturbation repricing")
    u.add_argument("--instance", required=True)
    u.add_argument("--direction", choices=["lower", "raise"], required=True)
    u.add_argument("--pct", type=float, default=20.0)
    u.add_argument("--cost-fn", choices=["f0", "f3"], default="f0")
    u.add_argument("--alpha", type=float, default=10.0)
    u.add_argument("--out", default="run")
    _add_solver_flags(u)
    u.set_defaults(func=cmd_uncertainty)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        doc = {"error": True, "code": exc.code, "message": str(exc)}
        out = getattr(args, "out", None)
        if out:
            try:
                os.makedirs(out, exist_ok=True)
                with open(os.path.join(out, "error.json"), "w") as fh:
                    json.dump(doc, fh, indent=1)
            except OSError:
                pass
        print(json.dumps(doc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

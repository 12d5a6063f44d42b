"""Distributed dynamic optimal power flow over a component/terminal graph.

The solver decomposes a microgrid into per-component proximal subproblems
coordinated by a two-phase consensus scheme whose duals are locational
marginal prices.  Supporting modules provide AC/DC line physics, household
device models with discrete start-time decisions, seeded scenario
generation, a centralized reference solver, and a command-line driver.
"""

from .admm import AdmmConfig, AdmmEngine, AdmmState, Solution, run, write_residual_csv
from .network import (
    BatterySpec,
    BusSpec,
    FixedInjectionSpec,
    GeneratorSpec,
    HouseSpec,
    LineSpec,
    Network,
    NetworkError,
    ShiftableSpec,
    build_network,
    compute_M,
    consensus_gap,
    to_per_unit,
)
from .scenario import InstanceConfig, gen_instance, gen_load_profile
from .two_stage import (
    NegotiatedPoint,
    StageTwoReport,
    negotiate,
    rd_fix_and_rerun,
    restore_feasibility,
    rp_local_decide,
    rp_run,
    ur_run,
)

__all__ = [
    "AdmmConfig",
    "AdmmEngine",
    "AdmmState",
    "BatterySpec",
    "BusSpec",
    "FixedInjectionSpec",
    "GeneratorSpec",
    "HouseSpec",
    "InstanceConfig",
    "LineSpec",
    "NegotiatedPoint",
    "Network",
    "NetworkError",
    "ShiftableSpec",
    "Solution",
    "StageTwoReport",
    "build_network",
    "compute_M",
    "consensus_gap",
    "gen_instance",
    "gen_load_profile",
    "negotiate",
    "rd_fix_and_rerun",
    "restore_feasibility",
    "rp_local_decide",
    "rp_run",
    "run",
    "to_per_unit",
    "ur_run",
    "write_residual_csv",
]

__version__ = "0.1.0"

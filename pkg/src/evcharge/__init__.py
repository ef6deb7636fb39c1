"""Decentralised routing of charging requests to multi-charger stations."""

__version__ = "0.1.0"

from .network import UNREACHABLE, NetworkSpec, ProcessFamilies, SeedPlan, validate_spec
from .planner import (
    extract_basic_activities,
    feasible_region_membership,
    solve_lb_lp,
    solve_stability_lp,
)
from .engine import PolicyConfig, RateSwitch, SimConfig, run_simulation, summarize
from .scenario import load_scenario, preset
from .diffusion import ScalingSchedule, build_h_map
from .experiment import ExperimentPlan, run_experiment, solve_and_report

__all__ = [
    "UNREACHABLE",
    "ExperimentPlan",
    "NetworkSpec",
    "PolicyConfig",
    "ProcessFamilies",
    "RateSwitch",
    "ScalingSchedule",
    "SeedPlan",
    "SimConfig",
    "build_h_map",
    "extract_basic_activities",
    "feasible_region_membership",
    "load_scenario",
    "preset",
    "run_experiment",
    "run_simulation",
    "solve_and_report",
    "solve_lb_lp",
    "solve_stability_lp",
    "summarize",
    "validate_spec",
]

"""Distributed peak shaving for residential batteries with ALADIN and ADMM."""

from .admm import AdmmConfig, AdmmResult, run_admm
from .aladin import AladinConfig, AladinResult, iterations_to, run_aladin
from .data import Scenario, generate_synthetic, load_scenario, write_scenario
from .model import (
    GridProblem,
    HouseholdParams,
    LocalProblem,
    advance_soc,
    build_grid_problem,
    build_reference,
)
from .mpc import MpcLog, PlantState, mpc_step, run_closed_loop
from .qpkernel import CentralizedSolution, DenseQp, solve_active_set, solve_centralized
from .simnet import MessageLedger, Transport

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "AdmmResult", "AladinConfig", "AladinResult", "CentralizedSolution",
    "DenseQp", "GridProblem", "HouseholdParams", "LocalProblem", "MessageLedger", "MpcLog",
    "PlantState", "Scenario", "Transport", "advance_soc", "build_grid_problem",
    "build_reference", "generate_synthetic", "iterations_to", "load_scenario", "mpc_step",
    "run_admm", "run_aladin", "run_closed_loop", "solve_active_set", "solve_centralized",
    "write_scenario",
]

"""Lower-level Nash equilibrium: best responses, KKT checks and the sweep solver."""
from .best_response import (best_response_classical, best_response_storage, best_response_transmission,
                            best_response_wind)
from .brute_force import CycleError, brute_force_nash
from .ipm import SubsolverError
from .kkt import KKTReport, kkt_report, kkt_residual, recover_multipliers
from .solver import ConvergenceError, EquilibriumResult, SolverConfig, solve_equilibrium

__all__ = [
    "best_response_classical", "best_response_storage", "best_response_transmission", "best_response_wind",
    "brute_force_nash", "CycleError", "SubsolverError", "KKTReport", "kkt_report", "kkt_residual",
    "recover_multipliers", "ConvergenceError", "EquilibriumResult", "SolverConfig", "solve_equilibrium",
]

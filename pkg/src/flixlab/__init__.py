"""Personalized federated optimization through local/global model mixtures."""

from flixlab.compression import CompressorSpec, compress, k_sweep, omega_of
from flixlab.flix_core import FlixProblem, comm_budget, one_shot_average
from flixlab.objectives import LogisticObjective, QuadraticObjective
from flixlab.solvers import THEORETICAL, prepare_problem, run_dcgd, run_dgd, run_diana, solve_local

__version__ = "0.1.0"

__all__ = [
    "CompressorSpec",
    "FlixProblem",
    "LogisticObjective",
    "QuadraticObjective",
    "THEORETICAL",
    "comm_budget",
    "compress",
    "k_sweep",
    "omega_of",
    "one_shot_average",
    "prepare_problem",
    "run_dcgd",
    "run_dgd",
    "run_diana",
    "solve_local",
]

from .constraints import RepairResult, Violation, check_constraints, feasible_mask, repair, violation_count
from .ga import GAResult, ParetoArchive, brute_force_optimum, ga_optimize
from .instance import load_instance, random_instance, save_instance
from .objectives import (DeploymentContext, compute_R, compute_RR, compute_RT, dominates, evaluate_batch,
                         evaluate_objectives, scalarize)

__all__ = [
    "DeploymentContext", "GAResult", "ParetoArchive", "RepairResult", "Violation",
    "brute_force_optimum", "check_constraints", "compute_R", "compute_RR", "compute_RT",
    "dominates", "evaluate_batch", "evaluate_objectives", "feasible_mask", "ga_optimize",
    "load_instance", "random_instance", "repair", "save_instance", "scalarize", "violation_count",
]

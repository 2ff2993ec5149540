"""Discrete multi-marginal optimal transport with checks for Monge structure and uniqueness."""
from .costs import CostModel, cost_from_spec
from .duality import Potentials, conjugate_iterate, max_slack_potentials, verify_splitting_set
from .harness import ExperimentConfig, bench_structured, run_battery, run_pipeline
from .measures import DiscreteMarginal, discretize_density, marginal_from_spec, validate_marginal
from .solver import (Coupling, NonConvergenceError, SolveResult, solve_entropic, solve_entropic_structured,
                     solve_exact_lp, uniqueness_probe)
from .verify import (SupportSet, build_M_set, check_ccm, check_envelope, check_graphical, check_w_subset_m,
                     twist_probe)

__all__ = [
    "CostModel", "cost_from_spec", "Potentials", "conjugate_iterate", "max_slack_potentials",
    "verify_splitting_set", "ExperimentConfig", "bench_structured", "run_battery", "run_pipeline",
    "DiscreteMarginal", "discretize_density", "marginal_from_spec", "validate_marginal", "Coupling",
    "NonConvergenceError", "SolveResult", "solve_entropic", "solve_entropic_structured", "solve_exact_lp",
    "uniqueness_probe", "SupportSet", "build_M_set", "check_ccm", "check_envelope", "check_graphical",
    "check_w_subset_m", "twist_probe",
]
__version__ = "0.1.0"

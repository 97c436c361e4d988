"""Numerical laboratory for the Yamabe flow on radial asymptotically flat backgrounds."""

from .background import (Background, ConformalLaplacian, assemble_conformal_laplacian,
                         conformal_background, conformal_scalar_curvature, make_background)
from .elliptic import (EllipticSolution, NewtonDivergence, SingularSystem, SolverError,
                       TrivialSolution, fit_decay_exponent, prescribe_scalar_curvature,
                       solve_harmonic_decay, solve_steady_negative, solve_yamabe_profile)
from .flow import (ConformalFlowResult, FlowControls, FlowState, StepRejected, Trajectory,
                   rescaled, run, run_conformal, scale_solution, step)
from .grid import RadialGrid, build_grid, weighted_sup_norm
from .verify import Verdict
from .yamabe import YamabeEstimate, estimate_yamabe

__all__ = [
    "Background", "ConformalLaplacian", "assemble_conformal_laplacian",
    "conformal_background", "conformal_scalar_curvature", "make_background",
    "EllipticSolution", "NewtonDivergence", "SingularSystem", "SolverError",
    "TrivialSolution", "fit_decay_exponent", "prescribe_scalar_curvature",
    "solve_harmonic_decay", "solve_steady_negative", "solve_yamabe_profile",
    "ConformalFlowResult", "FlowControls", "FlowState", "StepRejected", "Trajectory",
    "rescaled", "run", "run_conformal", "scale_solution", "step",
    "RadialGrid", "build_grid", "weighted_sup_norm",
    "Verdict", "YamabeEstimate", "estimate_yamabe",
]

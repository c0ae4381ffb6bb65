"""Data-driven uncertainty quantification and density steering.

Pipeline: collect noisy input/state data from an unknown linear system,
estimate the process-noise realization and its covariance, wrap the
estimation error in a high-confidence norm ball, and solve robust convex
programs that steer the state's mean and covariance to a target Gaussian.
"""

from .lti import (
    Dataset,
    GaussianState,
    LinearSystem,
    Trajectory,
    check_alpha_pe,
    check_pe,
    collect_dataset,
    collect_with_trajectory,
    hankel,
    paper_system,
    simulate,
)
from .linalg import pseudo_inverse
from .noise import (
    EstimationMethod,
    IdentifiedModel,
    NoiseEstimate,
    ce_estimate,
    identify_model,
    mle_estimate,
)
from .bounds import (
    BoundKind,
    ErrorCovariance,
    UncertaintyBound,
    chi_square_quantile,
    empirical_quantile,
    error_covariance,
    loose_bound,
    rfl_bound,
    rmt_expectation_bound,
    tight_bound,
)
from .conic import ConicProgram, ConicSolution, SolveStatus, solve, spectral_norm_leq
from .mean_steering import (
    MeanProblem,
    MeanSolution,
    model_error_radius,
    recover_controller,
    solve_nominal,
    solve_robust_sls,
)
from .cov_steering import (
    CovProblem,
    CovSolution,
    TerminalMode,
    recover_gains,
    solve_nominal_cs,
    solve_robust_cs,
)
from .pu_steering import PUProblem, PUSolution, recover_pu_controller, solve_pu
from .evaluation import (
    Controller,
    ControllerKind,
    QuantileStudySpec,
    RolloutStats,
    Table2Spec,
    Table3Spec,
    feasibility_sweep,
    quantile_study,
    run_closed_loop,
)

__version__ = "0.1.0"

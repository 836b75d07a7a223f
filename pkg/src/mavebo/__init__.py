"""High-dimensional Bayesian optimisation with MAVE-estimated reduced subspaces."""

from .acquisition import AcqConfig, ei_value, expected_improvement, h_func, maximize_ei
from .errors import (BandwidthTooSmallError, DiagnosticUndefinedError, DimensionError,
                     IllConditionedError, InsufficientDataError, RankDeficiencyError,
                     RunAborted)
from .geometry import (BallDomain, BoxDomain, ProjectionResult, alternating_projection,
                       clamp_to_box, det_lower_bound_check, project_affine,
                       random_orthonormal, sample_ball_uniform, subspace_distance)
from .gp import (GpModel, HyperBounds, KernelSpec, PredictiveDistribution, fit_gp,
                 fit_hyperparameters, kernel_eval, log_marginal_likelihood, posterior)
from .mave import (Dataset, EdrEstimate, LocalFit, MaveConfig, epanechnikov_weights,
                   estimate_edr, local_linear_fit, mave_objective, update_directions)
from .optimizer import (BudgetSplit, OptimizerConfig, RunTrace, TraceRecord, run_cmave_bo,
                        run_random_search, run_smave_bo, simple_regret)

__version__ = "0.1.0"

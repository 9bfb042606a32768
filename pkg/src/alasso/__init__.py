"""l1-analysis regularization with cosupport certificates and unbiased
risk estimation.

The pieces, bottom up: ``linops`` holds matrix-free operators and
analysis dictionaries, ``krylov`` the saddle-point solvers they feed,
``solvers`` the proximal iterations, ``cosparse`` the cosupport
detection / certification / local-map machinery, ``risk`` the DOF and
GSURE estimators, and ``bench`` plus ``cli`` the experiment harness on
top.
"""

from .linops import (DictionarySpec, LinearMap, circular_conv, compose,
                     dict_from_matrix, finite_diff_1d, finite_diff_2d,
                     from_matrix, haar_shift_invariant, identity,
                     identity_dict, mask, operator_norm, partial_dct,
                     scale, subsample, subsample_rows)
from .solvers import (Problem, Solution, SolverParams, objective,
                      solve_denoising_dual, solve_primal_dual)
from .cosparse import (Certificate, CosparseError, CosupportModel,
                       certificate, certificate_valid, certified_solve,
                       check_H0, cospace_basis, detect_cosupport,
                       enumerate_exact_solve, local_solution,
                       prediction_jacobian, reduce_to_HJ)
from .risk import (MCTrace, ProbeStream, RiskCache, RiskReport,
                   dof_estimate, evaluate_risks, gsure_estimation,
                   gsure_projection, mc_trace, reliability_mc,
                   sure_prediction, unbiasedness_mc, x_ml)
from .config import (ExperimentConfig, build_dictionary, build_operator,
                     build_signal, lambda_grid, lambda_max_heuristic,
                     load_config, psnr, signal_shape, solver_params,
                     with_overrides)
from .bench import (cmd_gen, cmd_solve, cmd_sweep, cmd_validate,
                    GenResult, SweepResult, ValidateResult)

__version__ = "0.1.0"

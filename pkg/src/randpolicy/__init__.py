"""randpolicy: randomized treatment-policy learning and regret asymptotics.

The package learns welfare-maximizing randomized policies from observational
or experimental data with three welfare estimators (inverse propensity
weighting with the true propensity, with entropy-tilted estimated weights,
and a cross-fitted doubly robust form) and quantifies the limiting
distribution of the welfare regret of each.
"""
from ._kernels import IMPLEMENTATION as kernel_implementation
from .balance import (WeightFit, balance_residual, fit_stabilized_weights,
                      weight_l2_error)
from .basis import (Basis, default_covariate_basis, default_treatment_basis,
                    indicator_basis, orthonormalize, shifted_legendre_basis,
                    tensor_polynomial_basis)
from .data import (ContinuousInterval, ContinuousLine, Dataset, Discrete,
                   FoldAssignment, TreatmentSpace, load_csv, save_csv,
                   split_folds)
from .nuisance import (CrossFitNuisance, MeanFit, crossfit,
                       fit_conditional_mean)
from .policy import (BinaryLogistic, GaussianLink, LinearFeatures, Softmax,
                     family_from_config)
from .quadrature import QuadratureRule
from .regret import (AsymptoticReport, estimate_curvature,
                     estimate_efficient_cov, estimate_tp_noise_cov,
                     gp_sup_compare, influence_values, make_report,
                     regret_limit_moments, sample_regret_limit,
                     threshold_policy_matrix)
from .simulate import (ContinuousDoseDgp, DiscreteDgp, McReport, McStudy,
                       OracleEvaluator, benchmark_family, benchmark_study,
                       binary_benchmark, dose_benchmark, fit_estimator,
                       monte_carlo, random_binary_dgp, run_dgp)
from .welfare import (BootstrapResult, PolicyEstimate, WelfareObjective,
                      bootstrap_se, build_objective, maximize)

__version__ = "0.1.0"

"""Multi-source transfer learning for linear regression.

Closed-form transfer estimators that pull a ridge-style fit toward linearly
related pretrained models, validation tuning of the transfer weight and of a
scalar shrinkage factor, exact and asymptotic error formulas with optimal
weights, benefit conditions, and a Monte-Carlo experiment harness.
"""

__version__ = "0.1.0"

from .debias import (DebiasGrid, debias_relations_known, default_alpha_grid,
                     default_rho_grid, tune_validation)
from .estimators import (TransferFit, fit_min_norm_ls, fit_ridge,
                         fit_tikhonov, fit_transfer, null_predictor,
                         test_error_analytic, test_error_mc)
from .experiments import (BiasVarConfig, BiasVarRecord, FactorRecord,
                          SweepConfig, SweepRecord, bias_variance,
                          default_gamma_grid, run_factor_tuning, run_sweep,
                          tune_alpha)
from .linalg import TOL, Spectrum, Tolerances, eig_sym, pseudoinverse, sym_psd_sqrt
from .taskmodel import (CovarianceSpec, Dataset, RelationSpec,
                        SourceTaskParams, TargetTaskParams, build_covariance,
                        build_relation, gen_dataset, make_source_theta,
                        relation_energy, sample_beta)
from .theory import (INFINITE, FixedPointSolution, GeneralSettingParams,
                     Region, SimpleSettingParams, alpha_simple_asymptotic,
                     classify_region, debias_alpha_asymptotic,
                     debias_beneficial_check, debias_beneficial_sides,
                     debias_error_asymptotic, debias_min_models,
                     debias_optimal_alpha, error_nonasym_trace,
                     error_simple_asymptotic, expected_error_general,
                     gamma_multi, gamma_single, is_infinite,
                     negative_transfer_check, negative_transfer_sides,
                     optimal_alpha_nonasym, pretrained_mean_cov, rho, rho_inf,
                     ridge_optimal, shrinkage_operator, solve_c,
                     solve_c_prime, solve_fixed_point, solve_q0, stieltjes_mp)

__all__ = [name for name in dir() if not name.startswith("_")]

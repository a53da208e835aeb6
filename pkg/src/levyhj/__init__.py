"""Lévy-type nonlocal operators, measure-continuity checks and a monotone HJ solver."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .measures import (DensityFamily, DiscretizedMeasure, FiniteAtomicFamily,  # noqa: E402
                       LevyItoFamily, PolarGrid, QuadConfig, RotatedQuadrantFamily,
                       VariableOrderFamily, discretize, levy_constant, moment2_ball, tail_mass,
                       transport_discretize)
from .transport import (brute_force_wasserstein, explicit_coupling,  # noqa: E402
                        gigli_bound_check, tv_annulus, tv_second_moment_ball, wasserstein_p_ball)
from .hamiltonian import HamiltonianSpec  # noqa: E402
from .operators import (LocalizationFunction, TestFunction, eval_full, eval_inner,  # noqa: E402
                        eval_outer, infimum_modulus, levy_ito_drift, levy_ito_eval,
                        localization_estimates, pushforward_eval)
from .assumptions import (AssumptionReport, SamplePlan, check_H, check_J, check_M1,  # noqa: E402
                          check_M2, check_M3, check_M4, check_M4_doubleprime, check_M4_prime,
                          check_M_unified, fit_power_law)
from .solver import (GridFunction, SolveConfig, certify_subsolution,  # noqa: E402
                     certify_supersolution, comparison_experiment, parabolic_comparison,
                     residual, solve_parabolic, solve_stationary)

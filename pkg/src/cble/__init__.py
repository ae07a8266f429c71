"""Continuous-state branching processes in Lévy environments: quenched flows,
non-explosion probabilities, condition checkers and Monte Carlo experiments."""

__version__ = "0.1.0"

from .branching_mech import (Atoms, ConditionReport, CustomTail, Exponential, Mechanism, Pareto,
                             Stable, Verdict, a_xi, check_condition_Axi, check_condition_B,
                             check_condition_C, check_condition_E1, exp_integral_E1, grey_classify,
                             phi_lambda, psi0)
from .estimates import McEstimate, RateFit, fit_rate
from .exp_functional import ExpFunctionalValue, exp_functional, stable_annealed_nonexplosion
from .levy_env import (AtomJumps, DoubleExponentialJumps, EnvPath, LevyTriplet, env_from_sde_params,
                       first_passage_below, running_extrema, sample_path)
from .quenched_flow import (QuenchedSolution, bound_check, nonexplosion_prob_given_env,
                            quenched_laplace, solve_backward)

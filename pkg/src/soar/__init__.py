"""Second-order asymptotical regularization for linear ill-posed problems.

Damped second-order flows ``x'' + eta x' + A^T A x = A^T y_delta``, their
spectral filters, discretizations, classical iterative baselines, stopping
rules, test problems and an experiment runner.
"""

from .errors import (BreakdownError, ConfigError, ContractError, DecompositionError,
                     DivergenceError, DomainError, FitError, SoarError)
from .filters import (DampingConfig, FilterConstants, FilterEvaluation, Regime,
                      SourceCondition, a_priori_error_bound, a_priori_time,
                      closed_form_solution, evaluate_filters, filter_constants,
                      qualification_constant)
from .operator import DenseOperator, SvdSystem
from .problems import (IntegralProblem, NoisyData, ProblemLabel, add_noise,
                       build_integral_problem, l2_relative_error, planted_source_problem)
from .solvers import Method, SolverConfig, SolverState, iteration_matrix_spectrum, run
from .stopping import RuleKind, StopReason, StoppingDecision, StoppingRule

__version__ = "0.1.0"

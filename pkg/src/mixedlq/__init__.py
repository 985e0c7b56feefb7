"""Mixed deterministic / random control of linear-quadratic stochastic systems.

Typical use::

    from mixedlq import problems, solve_riccati, build_gain_schedule
    spec = problems.regular_2x2()
    sol = solve_riccati(spec, 512)
    gains = build_gain_schedule(spec, sol.grid, sol)
"""
from .errors import (BlowUp, DimensionMismatch, EmptyBundle, GridMismatch, Inadmissible,
                     InputError, MixedLQError, NoConvergence, NotPositive, NotPositiveDefinite,
                     NotPSD, NotSymmetric, NumericError, OutOfRange, RepresentationMismatch,
                     SingularLambda, SingularLambda2, SingularLambdaHat, TimeInvariantRequired)
from .model import (CoefficientFrame, CoefficientSchedule, Dims, ProblemSpec, Regularity,
                    RegularityClass, frame_at, load_problem, make_frame, make_problem,
                    problem_from_dict, problem_to_dict, save_problem, validate)
from .riccati import (AREResult, RiccatiSolution, StructureMaps, TimeGrid, eval_structure_maps,
                      make_grid, solve_algebraic, solve_classic, solve_p1, solve_p2, solve_pair,
                      solve_riccati)
from .synthesis import (ClosedLoopSystem, GainSchedule, build_closed_loop, build_gain_schedule,
                        gains_at, perturb_gains)
from .simulate import (AffinePolicy, CostEstimate, TrajectoryBundle, estimate_cost,
                       simulate_mean, simulate_paths)
from .verify import (AdjointPath, ResidualReport, adjoint_reconstruct, matrix_property_suite,
                     optimality_residuals, residual_checks, suboptimality_check, value_identity)
from . import problems

__version__ = "0.1.0"

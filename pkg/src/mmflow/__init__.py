"""Moment measures of convex functions: recover u with (grad u)_# e^{-u} = mu
for a discrete mu, and tools around entropy and maximal-correlation transport."""

from .convex import (MaxAffineConvex, barycenter_exp_neg, cell_masses, cells,
                     conjugate_grid, evaluate, integrate_exp_neg, prune,
                     recession_check)
from .entropy import entropy, entropy_decomposition, entropy_lower_bound_constant
from .measures import (DiscreteMeasure, GridDensity, MeasureError,
                       PiecewiseDensity, barycenter, c_mu, center, first_moment,
                       load_measure, save_measure, second_moment)
from .moment_solver import (SolveReport, duality_gap, gradient_J, moment_measure,
                            objective_J, solve, verify_moment_identity)
from .ot_core import (geodesic, max_correlation, max_correlation_grid,
                      w2_distance, witness_halfspace_plan)
from .primal_verify import (displacement_convexity_suite,
                            hyperplane_divergence_demo, objective_P,
                            solve_fixed_point)

__version__ = "0.1.0"

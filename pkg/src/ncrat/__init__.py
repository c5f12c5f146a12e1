"""Distributions and Brown measures of noncommutative rational expressions
evaluated in freely independent random variables.

The pipeline: parse an expression, linearize it into a formal linear
representation, double or hermitize into a selfadjoint pencil, run
operator-valued subordination on the pencil sum, and invert the resulting
Cauchy transform into a density on the line or the plane.  A random-matrix
harness cross-checks the analytic output against sampled spectra.
"""

from .errors import (ArityError, BoundaryLimitUnstable, ConfigError,
                     ConvergenceFailure, DimensionMismatch, DomainError,
                     DomainStarved, EmptyPool, ExprSyntaxError, NcratError,
                     NearSingularResolvent, NoConvergence, NotHermitian,
                     NotRegularAtZero, NotSelfadjointInput, NotSignature,
                     ShapeMismatch, SingularBlock, SingularG, SingularQ0)
from .linalg import (general_eigenvalues, hermitian_eig, hermitization,
                     in_upper_half_plane, is_invertible, schur_inverse, svd_rank)
from .ncexpr import (Add, Adj, Const, Inv, MatNcExpr, Mul, NcExpr, SeriesTable,
                     Var, adjoint_expr, arity_of, eval_expr, eval_mat_expr,
                     matrix_equiv, parse_expr, series_expand, symmetrize,
                     to_text, value_at_zero)
from .pencil import LinearPencil, eval_pencil
from .linrep import (Flr, SaFlr, build_flr, flr_add, flr_adjoint, flr_affine,
                     flr_inv, flr_mul, flr_to_realization, hermitize_flr,
                     make_selfadjoint_flr, prune_flr, sa_flr_to_realization)
from .realization import (Realization, check_similarity, controllable_space,
                          cut_down, eval_realization, monic_form,
                          realization_series_coeff, sys_matrix,
                          unobservable_space)
from .freeprob import (Law, SubordinationResult, atomic, empirical,
                       f_transform, h_transform, law_from_json,
                       marchenko_pastur, matricial_cauchy, opval_cauchy_tensor,
                       pencil_sum_cauchy, scalar_cauchy, semicircle,
                       subordinate_pair)
from .algorithms import (BrownGrid, CornerSolver, DensityGrid,
                         GeneralizedRealization, ShiftedPencil,
                         build_shifted_pencil, cauchy_of_expr, compute_brown,
                         compute_distribution, default_eps_schedule,
                         hermitized_cauchy, hermitized_pencil, realize_at,
                         stieltjes_invert)
from .rmt import (Ensemble, brown_coverage, compare_density,
                  empirical_spectrum, ensembles_for_laws, sample, sample_tuple)

__version__ = "0.1.0"

"""Skew products over Misiurewicz-Thurston quadratic maps.

The base is a Misiurewicz-Thurston map ``Q_a(x) = a - x**2`` written in
coordinates where an iterate is uniformly expanding; the fiber is a
second quadratic map ``Q_b`` driven by a small coupling ``alpha phi``::

    F(theta, y) = (h(theta), Q_b(y) + alpha * phi(theta))

Submodules
----------
mt_params   parameter certification and post-critical sets
expanding   expanding coordinates, Markov partitions, inverse branches
skew        the skew product, Lyapunov exponents and constants
curves      admissible curves, non-flatness and separation
measures    Ulam densities, attractor cover and recurrence experiments
cli         command-line runner
"""
__version__ = "0.1.0"

from .errors import MTSkewError  # noqa: E402
from .mt_params import (MTCertificate, PostCriticalSet, check_topological_exactness,  # noqa: E402
                        find_mt_parameter, postcritical_set)
from .expanding import (ExpandingModel, build_model, distortion_report,  # noqa: E402
                        estimate_lambda_a, inverse_branch, markov_partition)
from .skew import (SkewSystem, alpha_max, build_system, compute_constants,  # noqa: E402
                   estimate_sigma, iterate, lyapunov_exponents)
from .curves import (AdmissibleCurve, check_linear_approx, check_nonflat,  # noqa: E402
                     curve_recurrence, evolve_horizontal, separation_test)
from .measures import (attractor, build_ulam, critical_return_test,  # noqa: E402
                       slow_recurrence, uniqueness_diagnostic, vertical_exponent_vs_bound)

__all__ = [
    "MTSkewError", "MTCertificate", "PostCriticalSet", "check_topological_exactness",
    "find_mt_parameter", "postcritical_set", "ExpandingModel", "build_model",
    "distortion_report", "estimate_lambda_a", "inverse_branch", "markov_partition",
    "SkewSystem", "alpha_max", "build_system", "compute_constants", "estimate_sigma",
    "iterate", "lyapunov_exponents", "AdmissibleCurve", "check_linear_approx",
    "check_nonflat", "curve_recurrence", "evolve_horizontal", "separation_test",
    "attractor", "build_ulam", "critical_return_test", "slow_recurrence",
    "uniqueness_diagnostic", "vertical_exponent_vs_bound",
]

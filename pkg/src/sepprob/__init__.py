"""A priori separability probabilities of bipartite quantum states.

Two routes are provided: Monte Carlo over Dirichlet x Haar product measures,
and exact lattice enumeration of density matrices weighted by the volume
elements of monotone metrics.
"""

__version__ = "0.1.0"

from .linalg import BipartiteDims, GaussianMatrix, determinant, hermitian_eigenvalues, partial_transpose, principal_minor
from .states import DensityMatrix, degree_of_entanglement, is_ppt, make_density, participation_ratio
from .metrics import MetricKind, mc_function, volume_weight
from .enumeration import EnumerationSpec, disc_grid, enumerate_states, simplex_points
from .estimate import WeightedTally, finalize, unweighted_estimate

__all__ = [
    "BipartiteDims",
    "DensityMatrix",
    "EnumerationSpec",
    "GaussianMatrix",
    "MetricKind",
    "WeightedTally",
    "degree_of_entanglement",
    "determinant",
    "disc_grid",
    "enumerate_states",
    "finalize",
    "hermitian_eigenvalues",
    "is_ppt",
    "make_density",
    "mc_function",
    "partial_transpose",
    "participation_ratio",
    "principal_minor",
    "simplex_points",
    "unweighted_estimate",
    "volume_weight",
]

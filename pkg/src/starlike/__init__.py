"""Spectral analysis of Jacobi operators on star-like graphs."""
from .graph import (BranchCoefficients, CompactComponent, GraphError, PathExplosionError,
                    StarLikeGraph, VertexId, beta_coefficient, build_sht, build_star_like, compact,
                    enumerate_paths, on_branch, sphere_sizes, star_graph, tree_dimension)
from .operator import apply, assemble_truncated, make_potential, moment, paste_halflines
from .halfline import (MFunctionError, jl_norm, m_function, solve, subordinacy_ratio,
                       subordinacy_trend, subordinate_direction)
from .spectral import (EpsSchedule, SpectralSample, borel_uv, generalized_eigenfunction,
                       multiplicity_profile, p_matrix, poltoratskii_ratio, reconstruct_branch,
                       resolvent_K, stieltjes_density, subordinate_space_dim)

__version__ = "0.1.0"

"""ptfem: 2D finite elements for elliptic transmission problems with weighted-Sobolev
diagnostics and parametric collocation."""

from .coefficients import CoefficientFamily, SamplingPlan, SourceData
from .convergence import make_case, run_rate_study, shift_constant_probe
from .errors import MathematicalError, PtfemError, ValidationError
from .exponents import compute_singular_exponents, eta_for_domain
from .fem import FESpace, assemble, solve, solve_augmented
from .geometry import DomainSpec, SmoothedDistance, Subdomain, classify_singular_points
from .mesh import GradedMesh, generate_initial_mesh, grading_for_order, refine
from .norms import NormSpec, broken_norm
from .parametric import CollocationGrid, build_surrogate, l2uv_error, parametric_derivative
from .problem import SCHEMA_VERSION

__version__ = "0.1.0"

__all__ = [
    "CoefficientFamily", "SamplingPlan", "SourceData", "make_case", "run_rate_study",
    "shift_constant_probe", "MathematicalError", "PtfemError", "ValidationError",
    "compute_singular_exponents", "eta_for_domain", "FESpace", "assemble", "solve", "solve_augmented",
    "DomainSpec", "SmoothedDistance", "Subdomain", "classify_singular_points", "GradedMesh",
    "generate_initial_mesh", "grading_for_order", "refine", "NormSpec", "broken_norm",
    "CollocationGrid", "build_surrogate", "l2uv_error", "parametric_derivative", "SCHEMA_VERSION",
]

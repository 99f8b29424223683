"""Splitting time integration for the Schroedinger-Poisson equation on GL spectral elements."""
from .assembly import Operators, build_operators
from .errors import ConfigurationError, InputError, SolverFailure, StagnationError
from .flows import Scheme, State, evolve, evolve_adaptive, scheme_registry, splitting_step
from .mesh import Mesh, build_mesh
from .quadrature import GLBasis, lobatto_rule

__all__ = [
    "ConfigurationError", "GLBasis", "InputError", "Mesh", "Operators", "Scheme",
    "SolverFailure", "StagnationError", "State", "build_mesh", "build_operators",
    "evolve", "evolve_adaptive", "lobatto_rule", "scheme_registry", "splitting_step",
]

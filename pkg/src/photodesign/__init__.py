"""Adjoint-based optimization of a dielectric permittivity layer for 2D time-domain waves.

A hybrid explicit solver couples structured finite differences on a
rectangle with P1 finite elements on an inner subdomain; the design is a
piecewise-constant permittivity on an annular region, optimized by an
adaptive conjugate gradient method with local mesh refinement.
"""
from .errors import (AlignmentError, ConfigurationError, DegenerateDirectionError, DomainError,
                     GeometryError, InstabilityError, LineageError)
from .forward import SourceSpec, solve_state
from .geometry import DomainSpec, TimePartition, build_hybrid_mesh, default_domain

__version__ = "0.1.0"

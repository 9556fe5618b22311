"""Frobenius manifolds, their Principal Hierarchies, bihamiltonian pencils and
Virasoro symmetries, computed with exact rational arithmetic."""

from .symcore import Expr, parse, to_str

__version__ = "0.1.0"

__all__ = ["Expr", "parse", "to_str", "__version__"]

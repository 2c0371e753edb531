"""Tangent and adjoint linearizations of fixed-point iterations, with complex-step verification."""

__version__ = "0.1.0"

"""Matching-model estimation via optimal transport."""

from ._otmatch import (
    DataError,
    DimensionError,
    DomainError,
    NumericalError,
    basis_matrix,
    closed_form_J,
    fit,
    gaussianize,
    mardia,
    monte_carlo,
    polarization_curve,
    presets,
    simulate,
    solve_assignment,
    surplus_matrix,
)

__all__ = [
    "DataError",
    "DimensionError",
    "DomainError",
    "NumericalError",
    "basis_matrix",
    "closed_form_J",
    "fit",
    "gaussianize",
    "mardia",
    "monte_carlo",
    "polarization_curve",
    "presets",
    "simulate",
    "solve_assignment",
    "surplus_matrix",
]

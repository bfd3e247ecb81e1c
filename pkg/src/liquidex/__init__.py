"""Optimal liquidation under drift uncertainty: boundary, values, simulation."""
from .model_core import (AssumptionViolationError, DerivedQuantities, InvalidInputError,
                         ModelParams, ValidationReport, belief_likelihood, derive,
                         parabolic, validate_params)

__version__ = "0.1.0"

"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: validation problems exit
with 2, numerical failures with 3.
"""


class RomeHtsError(Exception):
    """Base class for all package errors."""


class ValidationError(RomeHtsError):
    """Invalid inputs, shapes, names, or configuration."""


class StructuralError(ValidationError):
    """Malformed hierarchy graph (cycles, orphans, unbalanced trees)."""


class NumericError(RomeHtsError):
    """Singular or indefinite matrices, failed factorizations."""

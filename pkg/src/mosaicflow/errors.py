"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code raises the most specific
class that applies rather than bare ``ValueError``.
"""


class ContractError(ValueError):
    """Caller violated a precondition (shapes, sizes, mismatched grids)."""


class DomainError(ValueError):
    """A query point or parameter lies outside the admissible region."""


class DataError(ValueError):
    """Input data is malformed, e.g. a boundary function returned NaN."""


class FormatError(ValueError):
    """A file on disk does not match the expected layout or version."""


class ArrangementError(RuntimeError):
    """A genome arrangement violates its coverage invariants."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (Cholesky breakdown, NaN in a solve...)."""

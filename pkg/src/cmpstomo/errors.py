"""Exception hierarchy shared by all cmpstomo modules.

Validation problems derive from ``ValueError`` so that generic callers can
catch them without importing this module; the CLI maps the three families
(validation, fit failure, I/O) onto distinct exit codes.
"""

from __future__ import annotations


class CmpsTomoError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(CmpsTomoError, ValueError):
    """Input violates a documented precondition or invariant."""


class DimensionMismatch(ValidationError):
    pass


class NotNormalized(ValidationError):
    pass


class DegenerateSpectrum(ValidationError):
    pass


class IllConditionedBasis(ValidationError):
    """Transfer matrix eigenbasis too ill-conditioned for the spectral route.

    The direct (matrix exponential) evaluator does not need the eigenbasis
    and remains usable.
    """


class NoPrincipalRoot(ValidationError):
    pass


class SingularR(ValidationError):
    pass


class OddOrderUnavailable(ValidationError):
    """Odd-order phase correlators are not experimentally accessible.

    A per-shot global phase offset cancels only when the alternating sum of
    phases contains as many plus as minus signs.
    """

    def __init__(self, order: int) -> None:
        super().__init__(
            f"order {order} is odd; only even-order phase correlators are "
            "accessible because the random global phase of each shot cancels "
            "only in even-order alternating sums"
        )
        self.order = order


class SimplexViolation(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed file contents (header, row shape, NaN entries)."""


class CostGuardExceeded(ValidationError):
    pass


class OrderTooHigh(ValidationError):
    def __init__(self, requested: int, rank: int) -> None:
        super().__init__(
            f"requested model order {requested} exceeds the numerical rank {rank} of the data"
        )
        self.requested = requested
        self.rank = rank


class FitError(CmpsTomoError):
    """An optimisation could not produce a usable result."""


class FitDivergence(FitError):
    pass


class InfeasibleInitializer(FitError, ValueError):
    pass


class FitFailed(FitError):
    pass


class GenerationFailed(FitError):
    """Rejection sampling exhausted its budget."""

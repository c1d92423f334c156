"""Exception types shared across mtlab modules."""


class MtlabError(Exception):
    """Base class for all mtlab errors."""


class GridSizeError(MtlabError, ValueError):
    pass


class DomainError(MtlabError, ValueError):
    pass


class MaterialError(MtlabError, ValueError):
    pass


class GeometryError(MtlabError, ValueError):
    pass


class SingularityError(MtlabError, ValueError):
    pass


class SingularFrequencyError(MtlabError, ValueError):
    pass


class ExtensionError(MtlabError, ValueError):
    pass


class PreconditionError(MtlabError, ValueError):
    pass


class GuardError(MtlabError, ValueError):
    """Raised when a frequency or oscillation is not resolved by the grid."""


class ValidationError(MtlabError, ValueError):
    """Configuration validation failure; the message names the offending field."""


class ResonanceError(MtlabError, RuntimeError):
    """Linear solve failed or the operator is too badly conditioned."""

    def __init__(self, message, condition_estimate=None, column=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate
        self.column = column


class TauTooSmallError(MtlabError, RuntimeError):
    """A fixed-point or Krylov iteration diverged because |zeta| is too small."""


class StructureWarning(UserWarning):
    """Impedance matrix does not have the expected off-diagonal structure."""

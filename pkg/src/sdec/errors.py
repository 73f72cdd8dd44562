"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition (shape, range, size)."""


class DomainError(ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class RankDeficiencyError(ValueError):
    """A matrix that must be invertible is (numerically) singular."""

    def __init__(self, message, effective_rank=None):
        super().__init__(message)
        self.effective_rank = effective_rank


class InsufficientDataError(ValueError):
    """Too few usable values to compute a statistic."""


class NonFiniteStateError(ValueError):
    """A state vector contains NaN or inf."""


class NumericalAbort(RuntimeError):
    """An iterate became non-finite; carries whatever diagnostics were available."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

"""Exception hierarchy shared by every module."""


class MssdeError(Exception):
    """Base class for all library errors."""


class ModelSpecError(MssdeError):
    """Malformed model specification or polynomial that cannot be evaluated."""


class IrreducibilityError(MssdeError):
    """Generator is reducible (or degenerate) where irreducibility is required."""


class PreconditionError(MssdeError):
    """An input violates a documented precondition (e.g. centering)."""


class NotPSDError(MssdeError):
    """Matrix has an eigenvalue below the clamp tolerance."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class PathDivergedError(MssdeError):
    """Simulated state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StiffnessError(MssdeError):
    """A chain segment exceeded the jump-count safety valve."""


class HypothesisError(MssdeError):
    """A requested experiment violates a hypothesis of the convergence theory."""

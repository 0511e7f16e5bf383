"""Exception types shared across the package."""


class HypochainError(Exception):
    """Base class for all package errors."""


class StructureError(HypochainError, ValueError):
    """Coefficient fields disagree with the declared (n, d) layout."""


class NumericalError(HypochainError, FloatingPointError):
    """A coefficient or integrator produced a non-finite value."""


class DegenerateModelError(HypochainError):
    """The weak Hormander condition fails at the initial point."""


class UnsupportedModelError(HypochainError, ValueError):
    """An experiment was requested on a model it cannot handle."""


class SimulationError(HypochainError):
    """Too many Monte Carlo paths went non-finite."""


class InsufficientDataError(HypochainError, ValueError):
    """Not enough nonzero observations to fit or estimate."""

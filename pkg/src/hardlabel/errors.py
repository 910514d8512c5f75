"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Image or tensor geometry does not match what an operation expects."""


class InvalidEndpointsError(ValueError):
    """Attack endpoints violate a precondition (wrong side of the boundary)."""


class DegenerateStartError(ValueError):
    """Source and starting image coincide, so no step size can be derived."""


class InvalidSelectionError(ValueError):
    """Block-center selection contains duplicates or out-of-range coordinates."""


class UndefinedStatisticError(ValueError):
    """A statistic was requested over an empty collection."""


class TraceUnavailableError(LookupError):
    """A trace was queried before its first record."""


class ProtocolInfeasibleError(RuntimeError):
    """An evaluation protocol cannot be satisfied by the available data."""

    def __init__(self, message: str, class_label: int | None = None):
        super().__init__(message)
        self.class_label = class_label


class QueryBudgetExceeded(RuntimeError):
    """The oracle refused a query because the hard budget is spent."""


class TransportError(RuntimeError):
    """A remote oracle could not be reached after retries."""


class ConfigError(ValueError):
    """Attack or protocol configuration is internally inconsistent."""

"""Exception hierarchy shared across the package."""


class EvChargeError(Exception):
    """Base class for all errors raised by evcharge."""


class SpecError(EvChargeError, ValueError):
    """A network description violates its invariants."""


class EmptyTypeSet(SpecError):
    pass


class OrphanEvType(SpecError):
    pass


class NegativeRate(SpecError):
    pass


class IncompatibleActivity(EvChargeError, ValueError):
    pass


class NumericalFailure(EvChargeError, RuntimeError):
    """The simplex solver could not reach a verdict within its iteration cap."""


class NoUsableStation(EvChargeError, ValueError):
    pass


class TimeReversal(EvChargeError, ValueError):
    pass


class NotAForest(EvChargeError, ValueError):
    pass


class ZeroRateEdge(EvChargeError, ValueError):
    pass


class DimensionMismatch(EvChargeError, ValueError):
    pass


class NonPositivePool(EvChargeError, ValueError):
    pass


class GridOutOfRange(EvChargeError, ValueError):
    pass


class InsufficientHorizon(EvChargeError, ValueError):
    pass


class NotApplicable(EvChargeError, ValueError):
    """A diagnostic was requested for a system where it has no meaning."""


class ParseError(EvChargeError, ValueError):
    def __init__(self, message, *, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class UnknownPreset(EvChargeError, KeyError):
    pass


class CyclicBasicGraph(UserWarning):
    """Positive-rate activities contain a cycle; the optimum is not a forest."""

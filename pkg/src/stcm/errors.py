"""Exception hierarchy shared by every stcm module."""


class StcmError(Exception):
    """Base class for all package errors."""


class SchemaError(StcmError):
    """A scene document violates the schema. ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class DanglingReference(SchemaError):
    pass


class DimensionMismatch(StcmError, ValueError):
    pass


class UnknownPartId(StcmError, KeyError):
    pass


class DegenerateGeometry(StcmError, ValueError):
    pass


class UnsupportedClass(StcmError, ValueError):
    pass


class NoIntersection(StcmError, ValueError):
    pass


class ZeroLegLength(StcmError, ValueError):
    pass


class TooFewSamples(StcmError, ValueError):
    pass


class DegenerateModel(StcmError, RuntimeError):
    pass


class VersionMismatch(StcmError, ValueError):
    pass


class EmptySample(StcmError, ValueError):
    pass


class EmptyLibrary(StcmError, ValueError):
    pass


class InsufficientSamples(StcmError, ValueError):
    pass


class TransportError(StcmError, IOError):
    pass


class ParseExhausted(StcmError):
    def __init__(self, last_error, attempts):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(f"no valid scene after {attempts} attempts; last error: {last_error}")


class OfflineMode(StcmError):
    pass

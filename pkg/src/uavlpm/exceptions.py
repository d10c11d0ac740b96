"""Exception hierarchy shared by all modules."""


class UavLpmError(Exception):
    """Base class for package errors."""


class InvalidInputError(UavLpmError, ValueError):
    """An argument violates a documented precondition."""


class OutOfRegionError(InvalidInputError, IndexError):
    """A position or cell index falls outside the region grid."""


class UnsupportedGeometryError(InvalidInputError):
    """Target lies below the plane of the upward-facing array."""


class SingularGeometryError(UavLpmError, ArithmeticError):
    """Analytic Jacobian undefined (zero range or zenith direction)."""


class ConfigError(UavLpmError, ValueError):
    """Map, scenario or measurement file violates its schema.

    ``path`` names the offending element, e.g. ``buildings[3].height``.
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class LpmFormatError(UavLpmError, ValueError):
    """LPM file could not be parsed; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class UnsupportedVersionError(LpmFormatError):
    pass


class NoCandidateError(UavLpmError, LookupError):
    """No alternative base station is available for handover."""

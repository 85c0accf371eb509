"""Exception types raised across the package."""


class MicrolamError(Exception):
    """Base class for all package errors."""


class DetPositive(MicrolamError):
    pass


class OutsideHull(MicrolamError):
    pass


class Degenerate(MicrolamError):
    pass


class Singular(MicrolamError):
    pass


class Infeasible(MicrolamError):
    pass


class TooCloseToBoundary(MicrolamError):
    pass


class AlreadyInWell(MicrolamError):
    pass


class BoundaryDatum(MicrolamError):
    pass


class InvariantViolation(MicrolamError):
    pass


class ResolutionTooCoarse(MicrolamError):
    pass


class GridTooCoarse(MicrolamError):
    pass


class OutOfRange(MicrolamError):
    pass


class SupportViolation(MicrolamError):
    pass


class EmptyWindow(MicrolamError):
    pass


class ConfigError(MicrolamError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field

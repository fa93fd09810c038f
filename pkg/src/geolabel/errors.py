"""Exception types raised across the package."""


class GeoLabelError(Exception):
    """Base class for all package errors."""


class NonConvergence(GeoLabelError, ArithmeticError):
    pass


class ZeroQuaternion(GeoLabelError, ValueError):
    pass


class EmptyInput(GeoLabelError, ValueError):
    pass


class ResolutionMismatch(GeoLabelError, ValueError):
    pass


class NoLabeledPoints(GeoLabelError, ValueError):
    pass


class NoLabeledPixels(GeoLabelError, ValueError):
    pass


class DegenerateGeometry(GeoLabelError, ValueError):
    pass


class NoCorrespondences(GeoLabelError, ValueError):
    pass


class NoVisiblePoints(GeoLabelError, ValueError):
    pass


class DegenerateBBox(GeoLabelError, ValueError):
    pass


class EmptyMatrix(GeoLabelError, ValueError):
    pass


class EmptySpec(GeoLabelError, ValueError):
    pass


class ParseError(GeoLabelError, ValueError):
    """Malformed line in an input file; carries the file and 1-based line."""

    def __init__(self, message: str, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class UnknownCameraModel(ParseError):
    pass


class DanglingReference(ParseError):
    pass


class MalformedHeader(GeoLabelError, ValueError):
    pass


class TruncatedPayload(GeoLabelError, ValueError):
    pass


class WrongBitDepth(GeoLabelError, ValueError):
    pass


class WrongChannelCount(GeoLabelError, ValueError):
    pass

"""Exception hierarchy shared by every module of the package."""


class SparseLQRError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SparseLQRError, ValueError):
    pass


class NonSquare(DimensionMismatch):
    pass


class PartitionMismatch(DimensionMismatch):
    pass


class NotHurwitz(SparseLQRError):
    """A matrix that must have spectral abscissa < 0 does not."""


class NotStabilizing(NotHurwitz):
    """A gain K leaves A - B1 K with an eigenvalue in the closed right half-plane."""


class InitNotStabilizing(NotStabilizing):
    pass


class SingularSystem(SparseLQRError):
    pass


class NoStabilizingSolution(SparseLQRError):
    pass


class BadRadius(SparseLQRError, ValueError):
    pass


class WrongKind(SparseLQRError, ValueError):
    pass


class FeasibilityNotFound(SparseLQRError):
    pass


class BacktrackExhausted(SparseLQRError):
    pass


class InnerSolveFailed(SparseLQRError):
    pass


class ParseError(SparseLQRError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line


class InvalidWeights(SparseLQRError, ValueError):
    pass


class TooManyRejections(SparseLQRError):
    pass


class ZeroReference(SparseLQRError, ValueError):
    pass

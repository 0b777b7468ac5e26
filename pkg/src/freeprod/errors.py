"""Exception hierarchy shared by all pipeline stages."""


class FreeProductError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(FreeProductError):
    """A factor or product specification violates a structural requirement."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ValidationError(SpecError):
    pass


class ParseError(FreeProductError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class SingularResolvent(FreeProductError):
    pass


class NoConvergence(FreeProductError):
    def __init__(self, message, iterations=None, last_residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.last_residual = last_residual


class SingularJacobian(FreeProductError):
    pass


class TransienceGateFailed(FreeProductError):
    pass


class StationarityResidual(FreeProductError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class MalformedWord(FreeProductError):
    pass


class DivisionNearZero(FreeProductError):
    pass


class TailBoundTooLoose(FreeProductError):
    def __init__(self, requested_tol, achieved):
        super().__init__(
            f"truncation cannot certify tolerance {requested_tol:g}; best tail bound {achieved:g}"
        )
        self.requested_tol = requested_tol
        self.achieved = achieved


class NoRoot(FreeProductError):
    pass


class StateSpaceExplosion(FreeProductError):
    def __init__(self, reached):
        super().__init__(f"reachable word set exceeded the guard ({reached} words)")
        self.reached = reached

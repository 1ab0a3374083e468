"""Exception hierarchy shared by all modules."""


class MTSkewError(Exception):
    """Base class for every error raised by the package."""

    code = "error"

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


# parameter certification
class NoSignChange(MTSkewError):
    pass


class StrictnessViolation(MTSkewError):
    pass


# expanding coordinates
class EvaluationAtSingularity(MTSkewError):
    pass


class OutOfDomain(MTSkewError):
    pass


class NotExpanding(MTSkewError):
    pass


class DepthExceeded(MTSkewError):
    pass


class NotABranch(MTSkewError):
    pass


# skew product
class AlphaTooLarge(MTSkewError):
    pass


class ConstantCoupling(MTSkewError):
    pass


class EscapedRectangle(MTSkewError):
    pass


class InconsistentConstants(MTSkewError):
    pass


class InsufficientSegments(MTSkewError):
    pass


# curves
class NotSubElement(MTSkewError):
    pass


class MissingProvenance(MTSkewError):
    pass


class NoFiniteL0(MTSkewError):
    pass


class NoSeparation(MTSkewError):
    """Raised when no sibling pair separates; ``best`` holds the best pair found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# measures
class NotConverged(MTSkewError):
    """Power iteration hit its cap; ``result`` carries the partial estimate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# command line
class ConfigError(MTSkewError):
    """Invalid configuration; names the offending key and its admissible range."""

    def __init__(self, message, key=None, admissible=None):
        super().__init__(message)
        self.key = key
        self.admissible = admissible

    def to_dict(self):
        d = super().to_dict()
        d.update(key=self.key, admissible=self.admissible)
        return d

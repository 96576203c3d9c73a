"""Exception hierarchy for delaysurv."""


class DelaySurvError(Exception):
    """Base class for all errors raised by this package."""


# numerics
class NonFinite(DelaySurvError, ArithmeticError):
    pass


class BudgetExceeded(DelaySurvError, RuntimeError):
    pass


class LineSearchFailure(DelaySurvError, RuntimeError):
    pass


class MaxIterations(DelaySurvError, RuntimeError):
    pass


class BadBracket(DelaySurvError, ValueError):
    pass


# models and data
class DimensionMismatch(DelaySurvError, ValueError):
    pass


class OrderViolation(DelaySurvError, ValueError):
    pass


class MissingLatent(DelaySurvError, ValueError):
    pass


class MissingTau(DelaySurvError, ValueError):
    pass


class TauPresent(DelaySurvError, ValueError):
    pass


class SchemaError(DelaySurvError, ValueError):
    pass


# estimation
class IterationCap(DelaySurvError, RuntimeError):
    """Rejection sampler exhausted its attempt budget."""


class NoEvents(DelaySurvError, ValueError):
    pass


class ZeroExposure(DelaySurvError, ValueError):
    pass


class NoReports(DelaySurvError, ValueError):
    """Target domain has no reported events; the cohort-effect formulas degenerate."""


class NonUnimodal(DelaySurvError, RuntimeError):
    pass

"""Exception hierarchy shared by all modules."""


class KahlerLabError(Exception):
    """Base class for every error raised by the package."""


class NonFinite(KahlerLabError):
    pass


class BudgetExceeded(KahlerLabError):
    pass


class OutOfDomain(KahlerLabError):
    pass


class NonPositiveMetric(KahlerLabError):
    pass


class MetricDegenerate(KahlerLabError):
    pass


class NotNormalized(KahlerLabError):
    pass


class NonIntegrable(KahlerLabError):
    pass


class TailDominates(KahlerLabError):
    pass


class IllConditioned(KahlerLabError):
    pass


class ExtremalViolation(KahlerLabError):
    def __init__(self, message, coefficients=None):
        super().__init__(message)
        self.coefficients = coefficients


class DivergenceDetected(KahlerLabError):
    pass


class InsufficientData(KahlerLabError):
    pass


class SingularHessian(KahlerLabError):
    pass


class NotCritical(KahlerLabError):
    pass


class OutsideFiber(KahlerLabError):
    pass


class StencilOutsideDomain(KahlerLabError):
    pass


class ConfigInvalid(KahlerLabError):
    pass


class InvariantFailed(KahlerLabError):
    pass


class MissingManifest(KahlerLabError):
    pass

"""Exception hierarchy for the whole package.

Errors are grouped so the CLI can map them to exit codes: configuration
problems, data problems, and numerical failures.
"""


class RandPolicyError(Exception):
    """Base class for all package errors."""


class ConfigError(RandPolicyError):
    """Invalid configuration (bad spec, bad option combination)."""


class DataError(RandPolicyError):
    """Invalid or unusable input data."""


class NumericalError(RandPolicyError):
    """Numerical failure during fitting or evaluation."""


# ---------------------------------------------------------------- data
class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} not found in header")


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        self.row, self.column = row, column
        super().__init__(f"non-numeric value {value!r} at row {row}, column {column!r}")


class TreatmentNotInLevels(DataError):
    def __init__(self, row, value):
        self.row = row
        super().__init__(f"treatment {value!r} at row {row} is not a declared level")


class BadFoldCount(DataError):
    pass


# ---------------------------------------------------------------- policy
class DeterministicPolicyError(ConfigError):
    """Point-mass policies are rejected: they are not smoothly estimable
    and the whole asymptotic machinery here excludes them."""


class TreatmentOutOfSpace(DataError):
    pass


class QuadratureFailure(NumericalError):
    pass


# ---------------------------------------------------------------- basis
class IndicatorOnContinuous(ConfigError):
    pass


class PointOutOfDomain(DataError):
    pass


class SingularGram(NumericalError):
    def __init__(self, min_eig):
        self.min_eig = min_eig
        super().__init__(
            f"Gram matrix is numerically singular (min eigenvalue {min_eig:.3e}); "
            "reduce the number of basis functions")


# ---------------------------------------------------------------- weights
class NotConverged(NumericalError):
    """Optimizer hit its iteration cap. Carries the last iterate."""

    def __init__(self, message, fit=None):
        self.fit = fit
        super().__init__(message)


class SingularHessian(NumericalError):
    pass


# ---------------------------------------------------------------- nuisance
class SingularDesign(NumericalError):
    pass


class FoldTooSmall(DataError):
    pass


# ---------------------------------------------------------------- welfare
class OverlapViolation(DataError):
    pass


class BootstrapFitFailure(NumericalError):
    def __init__(self, n_failed, n_total):
        self.n_failed, self.n_total = n_failed, n_total
        super().__init__(
            f"{n_failed}/{n_total} bootstrap draws failed to fit (more than 10%)")


# ---------------------------------------------------------------- asymptotics
class DegenerateCurvature(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class KernelNotPSD(NumericalError):
    pass

"""Exception hierarchy.

``DataError`` covers malformed or inconsistent inputs (CLI exit code 3),
``NumericError`` covers optimization and linear-algebra failures (exit 4).
"""


class CodealError(Exception):
    pass


class DataError(CodealError, ValueError):
    pass


class NumericError(CodealError, ArithmeticError):
    pass


# panel geometry
class NonBinaryIndicator(DataError):
    pass


class ReversedTreatment(DataError):
    def __init__(self, unit, t):
        super().__init__(f"treatment switches off for unit {unit} at period {t}")
        self.unit = unit
        self.t = t


class NoNeverTreatedUnit(DataError):
    pass


class AlwaysTreatedUnit(DataError):
    pass


class UnsortedPanel(DataError):
    pass


class UntreatedTargetBlock(DataError):
    pass


class InvalidStaggeredPanel(DataError):
    pass


class MissingImputedCell(DataError):
    def __init__(self, i, t):
        super().__init__(f"no imputed counterfactual at cell ({i}, {t})")
        self.i = i
        self.t = t


class NoTreatedCells(DataError):
    pass


class ShapeMismatch(DataError):
    pass


# networks
class ZeroDimension(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NoForwardState(CodealError, RuntimeError):
    pass


class EmptyMask(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


# covariates / factor models / baselines
class NoControlUnits(DataError):
    def __init__(self, t):
        super().__init__(f"period {t} has no control units")
        self.t = t


class RankDeficientDesign(NumericError):
    pass


class EmptyControlSet(DataError):
    pass


class EmptyRegion(DataError):
    pass


class InsufficientPrePeriods(DataError):
    pass


class NoObservedCells(DataError):
    pass


class NonConvergence(RuntimeWarning):
    """Soft-impute hit its iteration cap; the best iterate is returned."""

    def __init__(self, max_iter):
        super().__init__(f"soft-impute did not converge within {max_iter} iterations")
        self.max_iter = max_iter


class UnknownEstimator(DataError):
    pass


class InvalidConfig(DataError):
    pass


class SubproblemError(CodealError):
    """Wraps a failure inside one (xi0, eta0) four-block subproblem."""

    def __init__(self, block, cause):
        super().__init__(f"subproblem {block}: {cause}")
        self.block = block
        self.cause = cause


# file ingestion
class MissingFile(DataError):
    pass


class HeaderMismatch(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row, col, value=None):
        super().__init__(f"non-numeric value {value!r} at row {row}, column {col}")
        self.row = row
        self.col = col


class JoinFailure(DataError):
    def __init__(self, unit):
        super().__init__(f"unit {unit!r} missing from one of the input files")
        self.unit = unit

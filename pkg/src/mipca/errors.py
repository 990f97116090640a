"""Exception hierarchy.

Every error carries a stable ``code`` that the command line maps to its
exit status, so scripts can branch on the category without parsing text.
"""


class MipcaError(Exception):
    code = "E_GENERIC"
    exit_status = 1


class InputError(MipcaError):
    """Bad data or arguments supplied by the caller."""

    code = "E_INPUT"
    exit_status = 2


class EmptyColumnError(InputError):
    code = "E_EMPTY_COLUMN"


class RankTooLargeError(InputError):
    code = "E_RANK_TOO_LARGE"


class ParseError(InputError):
    code = "E_PARSE"

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRowsError(ParseError):
    code = "E_RAGGED_ROWS"


class ConfigError(InputError):
    code = "E_CONFIG"


class NumericalError(MipcaError):
    """The data do not support the requested computation."""

    code = "E_NUMERIC"
    exit_status = 3


class DegenerateDofError(NumericalError):
    code = "E_DEGENERATE_DOF"


class NonFiniteError(NumericalError):
    code = "E_NON_FINITE"


class NotPositiveDefiniteError(NumericalError):
    code = "E_NOT_POSITIVE_DEFINITE"


class AnalysisError(MipcaError):
    code = "E_ANALYSIS"
    exit_status = 4


class OutOfRangeError(AnalysisError):
    code = "E_OUT_OF_RANGE"


class ConstantColumnError(AnalysisError):
    code = "E_CONSTANT_COLUMN"


class TooFewRowsError(AnalysisError):
    code = "E_TOO_FEW_ROWS"


class TooFewCompleteRowsError(TooFewRowsError):
    code = "E_TOO_FEW_COMPLETE_ROWS"


class SingularDesignError(AnalysisError):
    code = "E_SINGULAR_DESIGN"


class MixedTransformsError(AnalysisError):
    code = "E_MIXED_TRANSFORMS"


class CannotAmputeError(MipcaError):
    code = "E_CANNOT_AMPUTE"
    exit_status = 5

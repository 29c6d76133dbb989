"""Exception hierarchy.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DataError(ValueError):
    """Input data violates a precondition (shape, type, missingness)."""


class CsvParseError(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.row = row
        self.column = column


class NonNumericCellError(CsvParseError):
    pass


class DuplicateHeaderError(DataError):
    pass


class ImputationError(DataError):
    pass


class NumericalError(ArithmeticError):
    """A solver failed to converge or met a singular system."""


class MetricError(ValueError):
    pass


class NotTreeModelError(TypeError):
    pass

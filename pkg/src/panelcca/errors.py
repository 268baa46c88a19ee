"""Exception hierarchy.

``InputError`` subclasses signal bad user input (CLI exit status 1);
``NumericalError`` subclasses signal estimator failures (exit status 2).
"""


class PanelccaError(Exception):
    """Base class for all package errors."""


class InputError(PanelccaError, ValueError):
    pass


class NumericalError(PanelccaError, ArithmeticError):
    pass


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(ParseError):
    pass


class GridStructureError(InputError):
    pass


class AlignmentError(InputError):
    pass


class DomainError(InputError):
    pass


class DegenerateInputError(InputError):
    pass


class ExtractionError(InputError):
    def __init__(self, location, message=None):
        self.location = location
        super().__init__(message or f"no grid cell covers location {location!r}")


class ClusterCountError(InputError):
    pass


class CollinearityError(NumericalError):
    def __init__(self, columns, message=None):
        self.columns = list(columns)
        super().__init__(message or f"design matrix is rank deficient; dependent columns: {', '.join(self.columns)}")


class ConvergenceError(NumericalError):
    def __init__(self, message, trajectory=None):
        self.trajectory = list(trajectory) if trajectory is not None else []
        super().__init__(message)


class ConditioningError(NumericalError):
    def __init__(self, message, smallest_eigenvalue=None):
        self.smallest_eigenvalue = smallest_eigenvalue
        super().__init__(message)


class ZeroGradientError(NumericalError):
    pass


class DegenerateInitializationError(NumericalError):
    pass

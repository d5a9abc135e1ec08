"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented status codes without inspecting messages.
"""


class DualSpaceError(Exception):
    exit_code = 1


class ValidationError(DualSpaceError, ValueError):
    exit_code = 2


class NumericalError(DualSpaceError, ArithmeticError):
    exit_code = 3


class StorageError(DualSpaceError, OSError):
    exit_code = 4


class DimensionMismatchError(ValidationError):
    pass


class DegenerateSampleError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class LabelRangeError(ValidationError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UnsplittableCategoryError(ValidationError):
    pass


class BatchTooSmallError(ValidationError):
    pass


class ZeroNormRowError(ValidationError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SingularMatrixError(NumericalError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NonFiniteError(NumericalError):
    pass


class MissingFileError(StorageError, FileNotFoundError):
    pass


class SizeMismatchError(StorageError):
    def __init__(self, message, expected=None, found=None):
        super().__init__(message)
        self.expected = expected
        self.found = found


class NonFiniteDataError(StorageError):
    pass

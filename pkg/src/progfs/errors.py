"""Exception hierarchy shared by every module."""


class ProFSError(Exception):
    """Base class; ``code`` is the machine-readable prefix the CLI prints."""

    code = "error"


class ArgumentError(ProFSError, ValueError):
    code = "argument"


class StructuralError(ProFSError, ValueError):
    code = "structure"


class NumericError(ProFSError, ArithmeticError):
    code = "numeric"


class DataFormatError(ProFSError, ValueError):
    """Malformed input file; message carries the row/column location."""

    code = "format"

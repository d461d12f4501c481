class MirrorBertError(Exception):
    exit_code = 1


class DataError(MirrorBertError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(MirrorBertError, ArithmeticError):
    """A non-finite value appeared during a computation."""

    exit_code = 3

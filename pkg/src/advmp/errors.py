class AdvmpError(Exception):
    """Base class for package errors."""


class InvalidInputError(AdvmpError, ValueError):
    """Non-finite values, shape mismatches or out-of-range arguments."""


class UnsupportedModelError(AdvmpError, TypeError):
    """Operation does not apply to this model kind."""


class ConfigError(AdvmpError, ValueError):
    """Malformed or inconsistent experiment configuration."""


class NumericError(AdvmpError, ArithmeticError):
    """A computed quantity became non-finite."""


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def exit_code_for(exc):
    """CLI exit status for an exception; 1 for anything unexpected."""
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (AdvmpError, ValueError)):
        return EXIT_CONFIG
    return 1

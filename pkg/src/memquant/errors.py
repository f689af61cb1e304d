"""Exception hierarchy.

Every error raised by the library derives from :class:`MemquantError`, so
callers (the CLI in particular) can map classes to exit codes.
"""


class MemquantError(Exception):
    exit_code = 10


class InvalidQuantile(MemquantError, ValueError):
    exit_code = 11


class InvalidDimensions(MemquantError, ValueError):
    exit_code = 12


class DimensionMismatch(MemquantError, ValueError):
    exit_code = 13


class CountMismatch(MemquantError, ValueError):
    exit_code = 14


class RankDeficient(MemquantError, ArithmeticError):
    exit_code = 20


class NoConvergence(MemquantError, ArithmeticError):
    exit_code = 21


class SingularSystem(MemquantError, ArithmeticError):
    """The aggregated system could not be solved to tolerance.

    ``round_index`` is set by the DC driver to the 1-based aggregation round.
    """

    exit_code = 22

    def __init__(self, msg, round_index=None):
        super().__init__(msg)
        self.round_index = round_index


class NotConverged(MemquantError, ArithmeticError):
    exit_code = 23

    def __init__(self, iterations, residual):
        super().__init__(
            f"CG did not converge in {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class NotSymmetric(MemquantError, ValueError):
    exit_code = 24


class TooLarge(MemquantError, ValueError):
    exit_code = 25


class QuantileOutOfRange(MemquantError, ValueError):
    exit_code = 26


class InvalidArity(MemquantError, ValueError):
    exit_code = 27


class IntervalOverflow(MemquantError, OverflowError):
    exit_code = 28


class ConfigError(MemquantError, ValueError):
    """Experiment config parse failure; ``lineno`` is 1-based when known."""

    exit_code = 2

    def __init__(self, msg, lineno=None):
        if lineno is not None:
            msg = f"line {lineno}: {msg}"
        super().__init__(msg)
        self.lineno = lineno

"""Exception hierarchy shared by the library and the CLI.

Each error carries a ``module`` tag and the process exit code the CLI maps it
to (1 I/O, 2 usage, 3 numeric failure).
"""


class CtsynthError(Exception):
    module = "core"
    exit_code = 1


class DataError(CtsynthError, ValueError):
    module = "data"
    exit_code = 1


class SplineError(CtsynthError, ValueError):
    module = "control-path"
    exit_code = 3


class NumericError(CtsynthError, ArithmeticError):
    """A NaN or inf appeared in a loss or vector field."""

    module = "numeric"
    exit_code = 3


class DivergenceError(NumericError):
    """An ODE solve exhausted its step budget or step size underflowed."""

    module = "ode-solve"

    def __init__(self, message: str, t_reached: float | None = None):
        super().__init__(message)
        self.t_reached = t_reached


class TrainingAbort(NumericError):
    """A non-finite loss stopped training."""

    module = "trainer"

    def __init__(self, message: str, iteration: int, substep: str):
        super().__init__(message)
        self.iteration = iteration
        self.substep = substep


class ConfigError(CtsynthError, ValueError):
    module = "cli-io"
    exit_code = 2

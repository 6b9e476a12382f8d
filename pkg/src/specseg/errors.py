"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NonFiniteError / NumericError -> 4.
"""


class SpecsegError(Exception):
    pass


class ShapeError(SpecsegError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(SpecsegError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"{op}: produced non-finite values"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(SpecsegError):
    """Misuse of the tape: non-scalar backward root, detached graph, etc."""


class ConfigError(SpecsegError):
    pass


class DataError(SpecsegError):
    pass


class NumericError(SpecsegError):
    """Training aborted on a numeric failure (NaN loss or gradients)."""

    def __init__(self, msg, step=None, last_metrics=None):
        self.step = step
        self.last_metrics = last_metrics
        super().__init__(msg)

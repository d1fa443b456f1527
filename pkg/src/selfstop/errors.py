"""Exception hierarchy shared by all subpackages."""


class SelfStopError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SelfStopError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, message, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: {message}" + (f" (shapes {shown})" if shown else ""))


class NumericalError(SelfStopError, FloatingPointError):
    """A NaN or Inf was produced or consumed."""

    def __init__(self, where, message="non-finite values"):
        self.where = where
        super().__init__(f"{where}: {message}")


class GraphError(SelfStopError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, reused graph, missing grad)."""


class ConfigError(SelfStopError, ValueError):
    """Invalid configuration value."""
